use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::penman::{render_penman, traverse, AmrGraph, EdgeOrder, Visit};

use super::GraphReprError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinMode {
    /// Stored edge order from the root.
    Canon,
    /// Root kept, child order shuffled, edges usable in either direction.
    Reconf,
    /// Random start node, shuffled order, either direction.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NodesAndEdges,
    NodesOnly,
}

impl FromStr for LinMode {
    type Err = GraphReprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canon" => Ok(LinMode::Canon),
            "reconf" => Ok(LinMode::Reconf),
            "random" => Ok(LinMode::Random),
            _ => Err(GraphReprError::Unknown(format!("linearization mode `{s}`"))),
        }
    }
}

impl fmt::Display for LinMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinMode::Canon => "canon",
            LinMode::Reconf => "reconf",
            LinMode::Random => "random",
        })
    }
}

impl FromStr for Variant {
    type Err = GraphReprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nodes_and_edges" => Ok(Variant::NodesAndEdges),
            "nodes_only" => Ok(Variant::NodesOnly),
            _ => Err(GraphReprError::Unknown(format!("variant `{s}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::NodesAndEdges => "nodes_and_edges",
            Variant::NodesOnly => "nodes_only",
        })
    }
}

/// Flat symbol sequence of a depth-first traversal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linearization {
    pub symbols: Vec<String>,
    /// Unlabeled-graph node behind each symbol (`None` for separators).
    pub origin: Vec<Option<usize>>,
    pub mode: LinMode,
    pub variant: Variant,
    /// The same traversal as bracketed PENMAN text.
    pub penman: String,
}

impl Linearization {
    pub fn text(&self) -> String {
        self.symbols.join(" ")
    }
}

fn emit(g: &AmrGraph, visit: &Visit, variant: Variant, out: &mut Linearization) {
    let node = visit.node();
    out.symbols.push(g.node(node).concept.clone());
    out.origin.push(Some(node));
    if let Visit::Node { branches, .. } = visit {
        for b in branches {
            if variant == Variant::NodesAndEdges {
                out.symbols.push(b.role.clone());
                out.origin.push(Some(g.node_count() + b.edge));
            }
            // a second visit repeats the concept, not the variable
            emit(g, &b.visit, variant, out);
        }
    }
}

/// Linearization starting from an explicit node with a seeded shuffle
/// (or stored order when `seed` is `None`).
pub fn linearize_from(g: &AmrGraph, start: usize, order: EdgeOrder, mode: LinMode, variant: Variant) -> Linearization {
    let tree = traverse(g, start, order);
    let mut lin = Linearization {
        symbols: Vec::new(),
        origin: Vec::new(),
        mode,
        variant,
        penman: render_penman(g, &tree),
    };
    emit(g, &tree, variant, &mut lin);
    lin
}

pub fn linearize(g: &AmrGraph, mode: LinMode, variant: Variant, seed: u64) -> Linearization {
    match mode {
        LinMode::Canon => linearize_from(g, g.root(), EdgeOrder::Stored, mode, variant),
        LinMode::Reconf => linearize_from(g, g.root(), EdgeOrder::Shuffled { seed }, mode, variant),
        LinMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let candidates: Vec<usize> = (0..g.node_count()).filter(|&i| !g.node(i).constant).collect();
            let start = candidates[rng.gen_range(0..candidates.len())];
            let order = EdgeOrder::Shuffled { seed: rng.gen() };
            linearize_from(g, start, order, mode, variant)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penman::{is_isomorphic, normalize_inverse_roles, parse_penman};

    const CANON: &str = "(s / subsidize-01 :ARG1 (u / utility :poss (s2 / she) :mod (a / all)))";

    #[test]
    fn canon_symbols() {
        let g = parse_penman(CANON).unwrap();
        let lin = linearize(&g, LinMode::Canon, Variant::NodesAndEdges, 0);
        assert_eq!(lin.text(), "subsidize-01 :ARG1 utility :poss she :mod all");
        assert_eq!(lin.origin, vec![Some(0), Some(4), Some(1), Some(5), Some(2), Some(6), Some(3)]);
        assert_eq!(lin.penman, CANON);
        let nodes = linearize(&g, LinMode::Canon, Variant::NodesOnly, 0);
        assert_eq!(nodes.text(), "subsidize-01 utility she all");
    }

    #[test]
    fn random_from_she() {
        let g = parse_penman(CANON).unwrap();
        let seed = (0..200u64)
            .find(|&s| linearize(&g, LinMode::Random, Variant::NodesAndEdges, s).symbols[0] == "she")
            .expect("some seed starts at she");
        let lin = linearize(&g, LinMode::Random, Variant::NodesAndEdges, seed);
        assert!(lin.text().starts_with("she :poss-of utility"), "{}", lin.text());
        let back = parse_penman(&lin.penman).unwrap();
        assert!(is_isomorphic(&normalize_inverse_roles(&back), &g));
    }

    #[test]
    fn reentrant_mention_repeats_concept() {
        let g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))").unwrap();
        let lin = linearize(&g, LinMode::Canon, Variant::NodesAndEdges, 0);
        assert_eq!(lin.text(), "want-01 :ARG0 boy :ARG1 go-02 :ARG0 boy");
        assert_eq!(lin.origin[1], Some(3));
        assert_eq!(lin.origin[6], Some(1));
    }

    #[test]
    fn single_node() {
        let g = parse_penman("(a / alpha)").unwrap();
        for mode in [LinMode::Canon, LinMode::Reconf, LinMode::Random] {
            assert_eq!(linearize(&g, mode, Variant::NodesAndEdges, 5).symbols, vec!["alpha"]);
        }
    }

    #[test]
    fn reconf_keeps_root_and_is_seeded() {
        let g = parse_penman(CANON).unwrap();
        let a = linearize(&g, LinMode::Reconf, Variant::NodesAndEdges, 9);
        let b = linearize(&g, LinMode::Reconf, Variant::NodesAndEdges, 9);
        assert_eq!(a, b);
        assert_eq!(a.symbols[0], "subsidize-01");
    }
}
