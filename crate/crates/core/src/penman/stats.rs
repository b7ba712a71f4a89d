use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{normalize_inverse_roles, AmrGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphStats {
    /// Nodes of the unlabeled bipartite graph: concepts plus one per edge.
    pub size: usize,
    /// Longest shortest path in the undirected bipartite graph.
    pub diameter: usize,
    /// Nodes with in-degree above one after inverse-role normalization.
    pub reentrancies: usize,
}

pub fn graph_stats(g: &AmrGraph) -> GraphStats {
    let v = g.node_count();
    let size = v + g.edge_count();

    // undirected bipartite graph: concept nodes 0..v, role nodes v..
    let mut adj = vec![Vec::new(); size];
    for (k, e) in g.edges().iter().enumerate() {
        let r = v + k;
        adj[e.source].push(r);
        adj[r].push(e.source);
        adj[r].push(e.target);
        adj[e.target].push(r);
    }
    let mut diameter = 0;
    let mut dist = vec![usize::MAX; size];
    let mut queue = VecDeque::new();
    for s in 0..size {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    diameter = diameter.max(dist[w]);
                    queue.push_back(w);
                }
            }
        }
    }

    let reentrancies = normalize_inverse_roles(g)
        .in_degrees()
        .into_iter()
        .filter(|&d| d > 1)
        .count();
    GraphStats {
        size,
        diameter,
        reentrancies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::parse_penman;

    #[test]
    fn single_node() {
        let s = graph_stats(&parse_penman("(a / alpha)").unwrap());
        assert_eq!(
            s,
            GraphStats {
                size: 1,
                diameter: 0,
                reentrancies: 0
            }
        );
    }

    #[test]
    fn subsidize_example() {
        let g = parse_penman("(s / subsidize-01 :ARG1 (u / utility :poss (s2 / she) :mod (a / all)))").unwrap();
        let s = graph_stats(&g);
        assert_eq!(s.size, 7);
        assert_eq!(s.reentrancies, 0);
        // s2 -poss- u -ARG1- s : 4 hops, same for a
        assert_eq!(s.diameter, 4);
    }

    #[test]
    fn chain_diameter() {
        let g = parse_penman("(a / x :r (b / y :r (c / z)))").unwrap();
        assert_eq!(graph_stats(&g).diameter, 4);
    }
}
