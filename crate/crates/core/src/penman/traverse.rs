//! Depth-first traversals and PENMAN rendering.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::normalize::invert_role;
use super::AmrGraph;

/// How a traversal orders the edges incident to the node it is expanding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeOrder {
    /// Stored edge order, following edges in their written direction and
    /// falling back to inverse traversal only for sources that cannot be
    /// reached forward from the start.
    Stored,
    /// Seeded shuffle of all unused incident edges, in either direction.
    Shuffled { seed: u64 },
}

/// One node occurrence in a traversal tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Visit {
    /// First visit: the node with its expanded branches.
    Node { node: usize, branches: Vec<Branch> },
    /// Later visit of an already expanded node.
    Ref(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Branch {
    pub edge: usize,
    /// The edge is walked from its target to its source.
    pub inverted: bool,
    /// Role as written at this point (`-of` toggled when inverted).
    pub role: String,
    pub visit: Visit,
}

impl Visit {
    pub fn node(&self) -> usize {
        match self {
            Visit::Node { node, .. } | Visit::Ref(node) => *node,
        }
    }
}

struct Walker<'g> {
    g: &'g AmrGraph,
    incident: Vec<Vec<(usize, bool)>>,
    forward: Vec<bool>,
    visited: Vec<bool>,
    used: Vec<bool>,
    rng: Option<ChaCha8Rng>,
}

impl Walker<'_> {
    fn visit(&mut self, x: usize) -> Visit {
        self.visited[x] = true;
        let mut order = self.incident[x].clone();
        if let Some(rng) = self.rng.as_mut() {
            order.shuffle(rng);
        }
        let mut branches = Vec::new();
        for (e, outgoing) in order {
            if self.used[e] {
                continue;
            }
            let edge = &self.g.edges()[e];
            if !outgoing && self.rng.is_none() && self.forward[edge.source] {
                // the source will write this edge itself
                continue;
            }
            self.used[e] = true;
            let (y, role) = if outgoing {
                (edge.target, edge.role.clone())
            } else {
                (edge.source, invert_role(&edge.role))
            };
            let visit = if self.visited[y] {
                Visit::Ref(y)
            } else {
                self.visit(y)
            };
            branches.push(Branch {
                edge: e,
                inverted: !outgoing,
                role,
                visit,
            });
        }
        Visit::Node { node: x, branches }
    }
}

/// Depth-first traversal from `start` covering every edge exactly once
/// (the graph must be connected).
pub fn traverse(g: &AmrGraph, start: usize, order: EdgeOrder) -> Visit {
    let n = g.node_count();
    let mut incident = vec![Vec::new(); n];
    for (i, e) in g.edges().iter().enumerate() {
        incident[e.source].push((i, true));
        if e.target != e.source {
            incident[e.target].push((i, false));
        }
    }
    for list in &mut incident {
        list.sort();
    }
    let mut forward = vec![false; n];
    forward[start] = true;
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &(e, out) in &incident[u] {
            let t = g.edges()[e].target;
            if out && !forward[t] {
                forward[t] = true;
                stack.push(t);
            }
        }
    }
    let rng = match order {
        EdgeOrder::Stored => None,
        EdgeOrder::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut w = Walker {
        g,
        incident,
        forward,
        visited: vec![false; n],
        used: vec![false; g.edge_count()],
        rng,
    };
    w.visit(start)
}

/// Single-line PENMAN text for a traversal tree.
pub fn render_penman(g: &AmrGraph, visit: &Visit) -> String {
    let mut out = String::new();
    render_into(g, visit, &mut out);
    out
}

fn render_into(g: &AmrGraph, visit: &Visit, out: &mut String) {
    match visit {
        Visit::Ref(n) => {
            let node = g.node(*n);
            out.push_str(if node.constant { &node.concept } else { &node.var });
        }
        Visit::Node { node, branches } => {
            let nd = g.node(*node);
            if nd.constant && branches.is_empty() {
                out.push_str(&nd.concept);
                return;
            }
            out.push('(');
            out.push_str(&nd.var);
            out.push_str(" / ");
            out.push_str(&nd.concept);
            for b in branches {
                out.push(' ');
                out.push_str(&b.role);
                out.push(' ');
                render_into(g, &b.visit, out);
            }
            out.push(')');
        }
    }
}

/// Depth-first serialization from the root in stored edge order. Later
/// visits of a node emit only its variable.
pub fn serialize_penman(g: &AmrGraph) -> String {
    render_penman(g, &traverse(g, g.root(), EdgeOrder::Stored))
}
