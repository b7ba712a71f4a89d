//! Seeded graph generator and its exhaustive twin.
//!
//! Generation walks the sentence in surface order and makes every decision
//! through a [`Chooser`]. A random chooser samples one graph; the enumerator
//! replays every choice sequence to list the whole language for a small
//! inventory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::penman::AmrGraph;

use super::grammar::{kind_of, role_rank, Inventory, Kind};

/// Source of decisions. `weights[i] > 0` marks option `i` as allowed; at
/// least one option is always allowed.
pub trait Chooser {
    fn pick(&mut self, weights: &[f64]) -> usize;
}

pub struct RandomChooser(pub ChaCha8Rng);

impl RandomChooser {
    pub fn new(seed: u64) -> Self {
        RandomChooser(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Chooser for RandomChooser {
    fn pick(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut x = self.0.gen::<f64>() * total;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                if x < w {
                    return i;
                }
                x -= w;
            }
        }
        weights.iter().rposition(|&w| w > 0.0).expect("an allowed option")
    }
}

/// Shape parameters of generated graphs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenParams {
    pub max_nodes: usize,
    /// Chance that a noun-phrase slot re-mentions an earlier entity.
    pub reentrancy_rate: f64,
    /// Maximum nesting of embedded clauses.
    pub max_depth: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_nodes: 12,
            reentrancy_rate: 0.3,
            max_depth: 2,
        }
    }
}

const P_ADJUNCT: f64 = 0.12;
const P_ARG2: f64 = 0.25;
const P_POSS: f64 = 0.2;
const W_ARG1: [f64; 3] = [0.15, 0.55, 0.3]; // none, noun phrase, clause
const W_MODS: [f64; 3] = [0.6, 0.3, 0.1];
const MAX_ADJUNCTS: usize = 2;

struct Node {
    concept: &'static str,
    children: Vec<(&'static str, usize)>,
}

struct Gen<'a, C> {
    inv: &'a Inventory,
    params: GenParams,
    ch: &'a mut C,
    nodes: Vec<Node>,
    /// Most recent mention per gender class.
    last: [Option<usize>; 3],
    /// Nodes promised to slots that are still to come.
    reserve: usize,
}

impl<C: Chooser> Gen<'_, C> {
    fn flip(&mut self, p: f64) -> bool {
        self.ch.pick(&[1.0 - p, p]) == 1
    }

    fn new_node(&mut self, concept: &'static str) -> usize {
        self.nodes.push(Node {
            concept,
            children: Vec::new(),
        });
        self.nodes.len() - 1
    }

    fn room(&self, k: usize) -> bool {
        self.nodes.len() + k + self.reserve <= self.params.max_nodes
    }

    fn candidates(&self) -> Vec<usize> {
        if self.params.reentrancy_rate <= 0.0 {
            return Vec::new();
        }
        self.last.iter().flatten().copied().collect()
    }

    fn can_np(&self) -> bool {
        self.room(1) || !self.candidates().is_empty()
    }

    fn can_clause(&self) -> bool {
        self.room(2) || (self.room(1) && !self.candidates().is_empty())
    }

    fn clause(&mut self, depth: usize) -> usize {
        let p = self.ch.pick(&vec![1.0; self.inv.predicates.len()]);
        let v = self.new_node(self.inv.predicates[p]);
        let mut adjuncts = 0;
        // keep a node for the subject while the adjuncts are built
        self.reserve += 1;
        for i in 0..self.inv.adjuncts.len() {
            if adjuncts < MAX_ADJUNCTS && self.can_np() && self.flip(P_ADJUNCT) {
                let t = self.np();
                self.nodes[v].children.push((self.inv.adjuncts[i], t));
                adjuncts += 1;
            }
        }
        self.reserve -= 1;
        let subj = self.np();
        self.nodes[v].children.push((":ARG0", subj));
        if self.can_np() && self.flip(P_ARG2) {
            let t = self.np();
            self.nodes[v].children.push((":ARG2", t));
        }
        let weights = [
            W_ARG1[0],
            if self.can_np() { W_ARG1[1] } else { 0.0 },
            if depth < self.params.max_depth && self.can_clause() { W_ARG1[2] } else { 0.0 },
        ];
        match self.ch.pick(&weights) {
            1 => {
                let t = self.np();
                self.nodes[v].children.push((":ARG1", t));
            }
            2 => {
                let t = self.clause(depth + 1);
                self.nodes[v].children.push((":ARG1", t));
            }
            _ => {}
        }
        v
    }

    fn np(&mut self) -> usize {
        let cands = self.candidates();
        let rate = self.params.reentrancy_rate;
        let mut weights: Vec<f64> = cands.iter().map(|_| rate / cands.len() as f64).collect();
        weights.push(match (self.room(1), cands.is_empty()) {
            (false, _) => 0.0,
            (true, true) => 1.0,
            (true, false) => (1.0 - rate).max(0.0),
        });
        let k = self.ch.pick(&weights);
        if k < cands.len() {
            let v = cands[k];
            self.mention(v);
            return v;
        }
        let e = self.ch.pick(&vec![1.0; self.inv.entities.len()]);
        let v = self.new_node(self.inv.entities[e]);
        if self.can_np() && self.flip(P_POSS) {
            let p = self.np();
            self.nodes[v].children.push((":poss", p));
        }
        let m = self.inv.modifiers.len();
        let max_mods = 2.min(m).min(self.params.max_nodes - self.nodes.len() - self.reserve);
        let count = self.ch.pick(&W_MODS[..=max_mods]);
        let mut first = 0;
        for i in 0..count {
            // modifiers are picked in increasing inventory order, so each
            // set is produced exactly once
            let left = count - i - 1;
            let options: Vec<f64> = (0..m).map(|j| if j >= first && j + left < m { 1.0 } else { 0.0 }).collect();
            let j = self.ch.pick(&options);
            let t = self.new_node(self.inv.modifiers[j]);
            self.nodes[v].children.push((":mod", t));
            first = j + 1;
        }
        self.mention(v);
        v
    }

    fn mention(&mut self, v: usize) {
        if let Some(Kind::Ent(g)) = kind_of(self.nodes[v].concept) {
            self.last[g.index()] = Some(v);
        }
    }

    /// Assembles the graph with variables in depth-first order and children in
    /// canonical role order.
    fn finish(mut self) -> AmrGraph {
        for n in &mut self.nodes {
            n.children.sort_by_key(|&(r, _)| role_rank(r));
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            order.push(v);
            for &(_, t) in self.nodes[v].children.iter().rev() {
                if !seen[t] {
                    stack.push(t);
                }
            }
        }
        let mut new_id = vec![0usize; self.nodes.len()];
        let mut g: Option<AmrGraph> = None;
        let mut used: Vec<String> = Vec::new();
        for (i, &v) in order.iter().enumerate() {
            let concept = self.nodes[v].concept;
            let letter = concept.chars().next().unwrap_or('x').to_string();
            let mut var = letter.clone();
            let mut k = 1;
            while used.contains(&var) {
                k += 1;
                var = format!("{letter}{k}");
            }
            used.push(var.clone());
            new_id[v] = i;
            match g.as_mut() {
                None => g = Some(AmrGraph::new(&var, concept)),
                Some(g) => {
                    g.add_node(&var, concept).expect("fresh variable");
                }
            }
        }
        let mut g = g.expect("root clause");
        for &v in &order {
            for &(r, t) in &self.nodes[v].children {
                g.add_edge(new_id[v], r, new_id[t]);
            }
        }
        g
    }
}

/// Samples one graph.
pub fn generate_graph<C: Chooser>(ch: &mut C, inv: &Inventory, params: GenParams) -> AmrGraph {
    let mut gen = Gen {
        inv,
        params,
        ch,
        nodes: Vec::new(),
        last: [None; 3],
        reserve: 0,
    };
    gen.clause(0);
    gen.finish()
}

struct Replay {
    path: Vec<(usize, Vec<usize>)>,
    pos: usize,
}

impl Chooser for Replay {
    fn pick(&mut self, weights: &[f64]) -> usize {
        let allowed: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        if self.pos == self.path.len() {
            self.path.push((0, allowed));
        }
        let (k, ref options) = self.path[self.pos];
        self.pos += 1;
        options[k]
    }
}

/// Calls `visit` on every graph the generator can produce for `inv` and
/// `params` (re-mentions count as possible whenever `reentrancy_rate > 0`).
pub fn for_each_graph(inv: &Inventory, params: GenParams, mut visit: impl FnMut(AmrGraph)) {
    let mut replay = Replay { path: Vec::new(), pos: 0 };
    loop {
        replay.pos = 0;
        visit(generate_graph(&mut replay, inv, params));
        replay.path.truncate(replay.pos);
        while let Some((k, options)) = replay.path.last_mut() {
            if *k + 1 < options.len() {
                *k += 1;
                break;
            }
            replay.path.pop();
        }
        if replay.path.is_empty() {
            return;
        }
    }
}

/// Collects [`for_each_graph`] into a list.
pub fn enumerate_graphs(inv: &Inventory, params: GenParams) -> Vec<AmrGraph> {
    let mut out = Vec::new();
    for_each_graph(inv, params, |g| out.push(g));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::grammar::realize;
    use crate::penman::{graph_stats, serialize_penman};

    #[test]
    fn generated_graphs_realize() {
        let inv = Inventory::full();
        let mut ch = RandomChooser::new(3);
        for _ in 0..300 {
            let g = generate_graph(&mut ch, &inv, GenParams::default());
            assert!(g.node_count() <= 12);
            assert!(g.validate().is_ok());
            realize(&g).unwrap_or_else(|e| panic!("{e}: {}", serialize_penman(&g)));
        }
    }

    #[test]
    fn zero_rate_gives_trees() {
        let inv = Inventory::full();
        let mut ch = RandomChooser::new(4);
        let params = GenParams {
            reentrancy_rate: 0.0,
            ..GenParams::default()
        };
        for _ in 0..200 {
            assert_eq!(graph_stats(&generate_graph(&mut ch, &inv, params)).reentrancies, 0);
        }
    }

    #[test]
    fn enumeration_counts_small_language() {
        // one predicate, no modifiers or adjuncts, two nodes: subject only
        let inv = Inventory {
            predicates: vec!["see-01"],
            entities: vec!["boy", "dog"],
            modifiers: vec![],
            adjuncts: vec![],
        };
        let params = GenParams {
            max_nodes: 2,
            reentrancy_rate: 0.0,
            max_depth: 0,
        };
        let all = enumerate_graphs(&inv, params);
        assert_eq!(all.len(), 2);
        let with_reuse = enumerate_graphs(
            &inv,
            GenParams {
                reentrancy_rate: 0.5,
                ..params
            },
        );
        // subject alone, or a re-mentioned subject as ARG2 and/or ARG1
        assert_eq!(with_reuse.len(), 2 * 4);
    }
}
