use crate::penman::AmrGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum G1Kind {
    /// AMR node with this index.
    Concept(usize),
    /// Role node standing for the AMR edge with this index.
    Role(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct G1Node {
    pub label: String,
    pub kind: G1Kind,
}

/// Bipartite graph where each labeled edge `(u, r, v)` is replaced by a role
/// node `r` and the plain edges `u → r`, `r → v`. Concept nodes keep their AMR
/// indices; the role node of edge `k` has id `|V| + k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnlabeledGraph {
    pub nodes: Vec<G1Node>,
    pub edges: Vec<(usize, usize)>,
    pub concept_count: usize,
}

impl UnlabeledGraph {
    pub fn role_node(&self, edge: usize) -> usize {
        self.concept_count + edge
    }

    pub fn is_role(&self, id: usize) -> bool {
        id >= self.concept_count
    }
}

pub fn to_unlabeled(g: &AmrGraph) -> UnlabeledGraph {
    let v = g.node_count();
    let mut nodes: Vec<G1Node> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| G1Node {
            label: n.concept.clone(),
            kind: G1Kind::Concept(i),
        })
        .collect();
    let mut edges = Vec::with_capacity(2 * g.edge_count());
    for (k, e) in g.edges().iter().enumerate() {
        nodes.push(G1Node {
            label: e.role.clone(),
            kind: G1Kind::Role(k),
        });
        edges.push((e.source, v + k));
        edges.push((v + k, e.target));
    }
    UnlabeledGraph {
        nodes,
        edges,
        concept_count: v,
    }
}
