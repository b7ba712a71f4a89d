//! AMR graphs in PENMAN notation.
//!
//! An [`AmrGraph`] keeps nodes in declaration order and edges in source-text
//! order; both orders matter for the canonical traversal. Constants (numbers,
//! quoted strings, `-`) are ordinary nodes flagged `constant`, with generated
//! identifiers of the form `#k`.

mod iso;
mod normalize;
mod parse;
mod stats;
mod traverse;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

pub use iso::{is_isomorphic, is_isomorphic_rooted};
pub use normalize::{invert_role, normalize_inverse_roles, normalize_with_exemptions};
pub use parse::parse_penman;
pub use stats::{graph_stats, GraphStats};
pub use traverse::{render_penman, serialize_penman, traverse, Branch, EdgeOrder, Visit};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PenmanError {
    #[error("unbalanced parentheses at byte {offset}")]
    Unbalanced { offset: usize },
    #[error("reference to undeclared variable `{var}` at byte {offset}")]
    Undeclared { var: String, offset: usize },
    #[error("duplicate declaration of variable `{var}` at byte {offset}")]
    Duplicate { var: String, offset: usize },
    #[error("syntax error at byte {offset}: {msg}")]
    Syntax { msg: String, offset: usize },
}

impl PenmanError {
    pub fn offset(&self) -> usize {
        match self {
            PenmanError::Unbalanced { offset }
            | PenmanError::Undeclared { offset, .. }
            | PenmanError::Duplicate { offset, .. }
            | PenmanError::Syntax { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("root `{0}` is not a node")]
    MissingRoot(String),
    #[error("edge endpoint `{0}` is not a node")]
    MissingEndpoint(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("graph is not connected")]
    Disconnected,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AmrNode {
    pub var: String,
    pub concept: String,
    pub constant: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AmrEdge {
    pub source: usize,
    pub role: String,
    pub target: usize,
}

/// Rooted, directed, edge-labeled graph. Edges refer to nodes by index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrGraph {
    root: usize,
    nodes: Vec<AmrNode>,
    edges: Vec<AmrEdge>,
    index: HashMap<String, usize>,
}

impl AmrGraph {
    pub(crate) fn empty() -> Self {
        AmrGraph {
            root: 0,
            nodes: Vec::new(),
            edges: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Single-node graph.
    pub fn new(root_var: &str, concept: &str) -> Self {
        let mut g = AmrGraph::empty();
        g.add_node(root_var, concept).expect("fresh graph");
        g
    }

    pub fn add_node(&mut self, var: &str, concept: &str) -> Result<usize, GraphError> {
        self.push_node(var.to_string(), concept.to_string(), false)
    }

    /// Adds a constant node with a generated identifier.
    pub fn add_constant(&mut self, literal: &str) -> usize {
        let mut k = self.nodes.iter().filter(|n| n.constant).count();
        let mut var = format!("#{k}");
        while self.index.contains_key(&var) {
            k += 1;
            var = format!("#{k}");
        }
        self.push_node(var, literal.to_string(), true)
            .expect("generated id is fresh")
    }

    fn push_node(&mut self, var: String, concept: String, constant: bool) -> Result<usize, GraphError> {
        if self.index.contains_key(&var) {
            return Err(GraphError::DuplicateNode(var));
        }
        let id = self.nodes.len();
        self.index.insert(var.clone(), id);
        self.nodes.push(AmrNode {
            var,
            concept,
            constant,
        });
        Ok(id)
    }

    pub fn add_edge(&mut self, source: usize, role: &str, target: usize) {
        assert!(source < self.nodes.len() && target < self.nodes.len());
        self.edges.push(AmrEdge {
            source,
            role: role.to_string(),
            target,
        });
    }

    pub(crate) fn set_edge_target(&mut self, edge: usize, target: usize) {
        self.edges[edge].target = target;
    }

    /// Adds an edge between two variables by name.
    pub fn link(&mut self, source: &str, role: &str, target: &str) -> Result<(), GraphError> {
        let s = self
            .node_id(source)
            .ok_or_else(|| GraphError::MissingEndpoint(source.to_string()))?;
        let t = self
            .node_id(target)
            .ok_or_else(|| GraphError::MissingEndpoint(target.to_string()))?;
        self.add_edge(s, role, t);
        Ok(())
    }

    pub fn set_root(&mut self, root: usize) {
        assert!(root < self.nodes.len());
        self.root = root;
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn nodes(&self) -> &[AmrNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[AmrEdge] {
        &self.edges
    }

    pub fn node(&self, id: usize) -> &AmrNode {
        &self.nodes[id]
    }

    pub fn node_id(&self, var: &str) -> Option<usize> {
        self.index.get(var).copied()
    }

    pub fn concept(&self, var: &str) -> Option<&str> {
        self.node_id(var).map(|i| self.nodes[i].concept.as_str())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `(source var, role, target var)` triples in edge order.
    pub fn triples(&self) -> Vec<(&str, &str, &str)> {
        self.edges
            .iter()
            .map(|e| {
                (
                    self.nodes[e.source].var.as_str(),
                    e.role.as_str(),
                    self.nodes[e.target].var.as_str(),
                )
            })
            .collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for e in &self.edges {
            deg[e.target] += 1;
        }
        deg
    }

    /// Undirected neighbor lists (one entry per incident edge).
    pub(crate) fn undirected_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.source].push(e.target);
            adj[e.target].push(e.source);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let adj = self.undirected_adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        seen[self.root] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.nodes.len()
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if self.root >= self.nodes.len() {
            return Err(GraphError::MissingRoot(self.root.to_string()));
        }
        for e in &self.edges {
            for end in [e.source, e.target] {
                if end >= self.nodes.len() {
                    return Err(GraphError::MissingEndpoint(end.to_string()));
                }
            }
        }
        if !self.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(())
    }

    /// Same nodes with a replaced edge list.
    pub(crate) fn with_edges(&self, edges: Vec<AmrEdge>) -> AmrGraph {
        AmrGraph {
            root: self.root,
            nodes: self.nodes.clone(),
            edges,
            index: self.index.clone(),
        }
    }
}

impl fmt::Display for AmrGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_penman(self))
    }
}
