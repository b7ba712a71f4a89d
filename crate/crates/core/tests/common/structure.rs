//! Structural checks on graph conversion, token graphs and convolutions,
//! each returning a description of the first failure.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use structadapt::adapters::{gcn_conv, rgcn_conv, ConvGraph, GcnNorm};
use structadapt::graph::{
    build_token_graph, linearize, to_unlabeled, tokenize_symbols, LinMode, RelationTable, Rep, TokenEdge, TokenGraph,
    Tokenization, UnlabeledGraph, Variant, DEFAULT, REVERSE,
};
use structadapt::penman::{is_isomorphic, is_isomorphic_rooted, normalize_inverse_roles, parse_penman, serialize_penman, AmrGraph};
use structadapt::tensor::{Tape, Tensor};
use structadapt::tokenizer::{Vocabulary, EOS};

use super::random;

pub const MODES: [LinMode; 3] = [LinMode::Canon, LinMode::Reconf, LinMode::Random];
const REPS: [Rep; 4] = [Rep::Rep1, Rep::Rep2, Rep::Rep3, Rep::Complete];

type Check = Result<(), String>;

fn fail(g: &AmrGraph, msg: impl AsRef<str>) -> String {
    format!("{} on {}", msg.as_ref(), serialize_penman(g))
}

pub fn g1_counts(graphs: &[AmrGraph]) -> Check {
    for g in graphs {
        let u = to_unlabeled(g);
        let (v, e) = (g.node_count(), g.edge_count());
        if u.nodes.len() != v + e || u.edges.len() != 2 * e {
            return Err(fail(g, format!("|V1| = {}, |E1| = {}", u.nodes.len(), u.edges.len())));
        }
        for (k, edge) in g.edges().iter().enumerate() {
            if u.edges[2 * k] != (edge.source, v + k) || u.edges[2 * k + 1] != (v + k, edge.target) {
                return Err(fail(g, format!("edge {k} not split through role node {}", v + k)));
            }
        }
    }
    Ok(())
}

/// Token positions of every mention of each unlabeled-graph node.
fn mentions(origin: &[Option<usize>], tok: &Tokenization) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (o, span) in origin.iter().zip(&tok.spans) {
        if let Some(o) = o {
            out.entry(*o).or_default().push(span.len());
        }
    }
    out
}

/// rep1 default-edge count: Σ over unlabeled edges of |tok(u)|·|tok(v)| over
/// all mention pairs, plus the links between distinct mentions of one node.
fn rep1_expected(u: &UnlabeledGraph, origin: &[Option<usize>], tok: &Tokenization) -> usize {
    let m = mentions(origin, tok);
    let none = Vec::new();
    let size = |n: usize| -> usize { m.get(&n).unwrap_or(&none).iter().sum() };
    let edges: usize = u.edges.iter().map(|&(s, t)| size(s) * size(t)).sum();
    let links: usize = m
        .values()
        .map(|w| {
            let total: usize = w.iter().sum();
            let same: usize = w.iter().map(|x| x * x).sum();
            total * total - same
        })
        .sum();
    edges + links
}

pub fn rep1_product_rule(graphs: &[AmrGraph], vocab: &Vocabulary) -> Check {
    let table = RelationTable::structural();
    for (i, g0) in graphs.iter().enumerate() {
        let g = normalize_inverse_roles(g0);
        let u = to_unlabeled(&g);
        for mode in MODES {
            let lin = linearize(&g, mode, Variant::NodesAndEdges, i as u64);
            let tok = tokenize_symbols(vocab, &lin.symbols);
            let tg = build_token_graph(&u, &lin, &tok, Rep::Rep1, &table).map_err(|e| e.to_string())?;
            let want = rep1_expected(&u, &lin.origin, &tok);
            if tg.count_relation(DEFAULT) != want {
                return Err(fail(&g, format!("{mode}: {} default edges, product rule gives {want}", tg.count_relation(DEFAULT))));
            }
        }
    }
    Ok(())
}

fn twins(tg: &TokenGraph, table: &RelationTable) -> Result<(), String> {
    let set: BTreeSet<TokenEdge> = tg.edges.iter().copied().collect();
    for e in &tg.edges {
        let twin = TokenEdge { src: e.tgt, tgt: e.src, relation: table.reverse_of(e.relation) };
        if !set.contains(&twin) {
            return Err(format!("edge {e:?} has no reverse twin"));
        }
    }
    if !table.is_typed() && tg.count_relation(DEFAULT) != tg.count_relation(REVERSE) {
        return Err("default and reverse counts differ".into());
    }
    Ok(())
}

fn token_graphs(g: &AmrGraph, vocab: &Vocabulary, seed: u64) -> Result<Vec<(RelationTable, TokenGraph)>, String> {
    let g = normalize_inverse_roles(g);
    let u = to_unlabeled(&g);
    let mut out = Vec::new();
    for variant in [Variant::NodesAndEdges, Variant::NodesOnly] {
        let table = RelationTable::for_variant(variant, std::slice::from_ref(&g));
        for mode in MODES {
            let lin = linearize(&g, mode, variant, seed);
            let tok = tokenize_symbols(vocab, &lin.symbols);
            for rep in REPS {
                let tg = build_token_graph(&u, &lin, &tok, rep, &table).map_err(|e| e.to_string())?;
                out.push((table.clone(), tg));
            }
        }
    }
    Ok(out)
}

pub fn reverse_twins(graphs: &[AmrGraph], vocab: &Vocabulary) -> Check {
    for (i, g) in graphs.iter().enumerate() {
        for (table, tg) in token_graphs(g, vocab, i as u64)? {
            twins(&tg, &table).map_err(|m| fail(g, m))?;
        }
    }
    Ok(())
}

/// Dense `out[v] = Σ_u Â[v,u] / √(deg(v)·deg(u)) · W x_u` with Â the forward
/// adjacency plus self loops.
#[allow(clippy::needless_range_loop)]
fn dense_gcn(tg: &TokenGraph, table: &RelationTable, norm: GcnNorm, x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let n = tg.seq_len;
    let mut a = vec![vec![0.0; n]; n];
    for (v, row) in a.iter_mut().enumerate() {
        row[v] = 1.0;
    }
    for e in tg.edges.iter().filter(|e| table.is_forward(e.relation)) {
        a[e.tgt][e.src] += 1.0;
    }
    let indeg: Vec<f64> = (0..n).map(|v| a[v].iter().sum()).collect();
    let outdeg: Vec<f64> = (0..n).map(|u| (0..n).map(|v| a[v][u]).sum()).collect();
    let deg = |u: usize| if norm == GcnNorm::InDegree { indeg[u] } else { outdeg[u] };
    let xw = x.matmul(&w.transpose()).unwrap();
    let mut out = Tensor::zeros(&[n, xw.cols()]);
    for v in 0..n {
        for u in 0..n {
            let c = a[v][u] / (indeg[v] * deg(u)).sqrt();
            for j in 0..xw.cols() {
                out.data_mut()[v * xw.cols() + j] += c * xw.get(u, j);
            }
        }
    }
    out
}

/// Dense `out[v] = Σ_r Σ_u A_r[v,u] / |N_r(v)| · W_r x_u`.
#[allow(clippy::needless_range_loop)]
fn dense_rgcn(tg: &TokenGraph, relations: usize, x: &Tensor<f64>, ws: &[Tensor<f64>]) -> Tensor<f64> {
    let n = tg.seq_len;
    let m = ws[0].rows();
    let mut out = Tensor::zeros(&[n, m]);
    for (r, w) in ws.iter().enumerate().take(relations) {
        let mut a = vec![vec![0.0; n]; n];
        for e in tg.edges.iter().filter(|e| e.relation == r) {
            a[e.tgt][e.src] += 1.0;
        }
        let xw = x.matmul(&w.transpose()).unwrap();
        for v in 0..n {
            let deg: f64 = a[v].iter().sum();
            if deg == 0.0 {
                continue;
            }
            for u in 0..n {
                for j in 0..m {
                    out.data_mut()[v * m + j] += a[v][u] / deg * xw.get(u, j);
                }
            }
        }
    }
    out
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
}

fn conv_outputs(graph: &ConvGraph<f64>, x: &Tensor<f64>, w: &Tensor<f64>, ws: &[Tensor<f64>]) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let g = gcn_conv(&mut tape, xv, graph, wv).unwrap();
    let wvs: Vec<_> = ws.iter().map(|w| tape.constant(w.clone())).collect();
    let r = rgcn_conv(&mut tape, xv, graph, &wvs).unwrap();
    (tape.value(g).clone(), tape.value(r).clone())
}

/// Convolutions against dense oracles on every graph with at most
/// `max_nodes` nodes, all representations, both variants and norms.
pub fn dense_oracles(graphs: &[AmrGraph], vocab: &Vocabulary, max_nodes: usize) -> Result<usize, String> {
    let (d, m) = (5, 3);
    let mut checked = 0;
    for (i, g) in graphs.iter().enumerate().filter(|(_, g)| g.node_count() <= max_nodes) {
        for (table, tg) in token_graphs(g, vocab, i as u64)? {
            let x = random(&[tg.seq_len, d], i as u64);
            let w = random(&[m, d], 100 + i as u64);
            let ws: Vec<_> = (0..table.len()).map(|r| random(&[m, d], 200 + r as u64)).collect();
            for norm in [GcnNorm::InDegree, GcnNorm::OutDegree] {
                let graph = ConvGraph::new(&tg, &table, norm).map_err(|e| e.to_string())?;
                let (gcn, rgcn) = conv_outputs(&graph, &x, &w, &ws);
                if !close(&gcn, &dense_gcn(&tg, &table, norm, &x, &w)) {
                    return Err(fail(g, format!("gcn ({norm}) differs from the dense oracle")));
                }
                if !close(&rgcn, &dense_rgcn(&tg, table.len(), &x, &ws)) {
                    return Err(fail(g, "rgcn differs from the dense oracle"));
                }
            }
        }
        checked += 1;
    }
    Ok(checked)
}

fn permute_rows(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let c = x.cols();
    let mut out = Tensor::zeros(x.shape());
    for (i, &p) in perm.iter().enumerate() {
        out.data_mut()[p * c..(p + 1) * c].copy_from_slice(x.row(i));
    }
    out
}

/// Relabeling positions by a random permutation permutes the convolution
/// outputs the same way, bit for bit.
pub fn permutation_equivariance(graphs: &[AmrGraph], vocab: &Vocabulary) -> Check {
    let (d, m) = (6, 4);
    for (i, g) in graphs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        for (table, tg) in token_graphs(g, vocab, i as u64)?.into_iter().step_by(3) {
            let graph = ConvGraph::<f64>::new(&tg, &table, GcnNorm::InDegree).map_err(|e| e.to_string())?;
            let mut perm: Vec<usize> = (0..tg.seq_len).collect();
            perm.shuffle(&mut rng);
            let relabel = |edges: &[structadapt::tensor::Edge<f64>]| {
                edges
                    .iter()
                    .map(|e| structadapt::tensor::Edge { src: perm[e.src], tgt: perm[e.tgt], weight: e.weight })
                    .collect::<Vec<_>>()
            };
            let permuted = ConvGraph {
                n: graph.n,
                gcn: relabel(&graph.gcn),
                relations: graph.relations.iter().map(|r| relabel(r)).collect(),
            };
            let x = random(&[tg.seq_len, d], i as u64);
            let w = random(&[m, d], 1);
            let ws: Vec<_> = (0..table.len()).map(|r| random(&[m, d], 2 + r as u64)).collect();
            let (gcn, rgcn) = conv_outputs(&graph, &x, &w, &ws);
            let (pg, pr) = conv_outputs(&permuted, &permute_rows(&x, &perm), &w, &ws);
            if pg != permute_rows(&gcn, &perm) || pr != permute_rows(&rgcn, &perm) {
                return Err(fail(g, "convolution is not permutation equivariant"));
            }
            // rebuilding from a relabeled token graph agrees up to summation order
            let mut edges: Vec<TokenEdge> = tg
                .edges
                .iter()
                .map(|e| TokenEdge { src: perm[e.src], tgt: perm[e.tgt], relation: e.relation })
                .collect();
            edges.sort();
            let mut origin = vec![None; tg.seq_len];
            for (p, o) in tg.position_origin.iter().enumerate() {
                origin[perm[p]] = *o;
            }
            let rebuilt = TokenGraph { seq_len: tg.seq_len, edges, position_origin: origin };
            let rebuilt = ConvGraph::new(&rebuilt, &table, GcnNorm::InDegree).map_err(|e| e.to_string())?;
            let (rg, rr) = conv_outputs(&rebuilt, &permute_rows(&x, &perm), &w, &ws);
            if !close(&rg, &pg) || !close(&rr, &pr) {
                return Err(fail(g, "relabeled token graph gives different convolutions"));
            }
        }
    }
    Ok(())
}

/// Re-parsing each linearization and normalizing inverse roles gives back
/// the normalized source graph.
pub fn linearization_validity(graphs: &[AmrGraph], seeds: u64) -> Check {
    for (i, g) in graphs.iter().enumerate() {
        let norm = normalize_inverse_roles(g);
        for source in [g, &norm] {
            for mode in MODES {
                for s in 0..seeds {
                    let seed = (i as u64) * 1000 + s;
                    let lin = linearize(source, mode, Variant::NodesAndEdges, seed);
                    let back = parse_penman(&lin.penman).map_err(|e| fail(g, format!("{mode}: {e} in {}", lin.penman)))?;
                    let back = normalize_inverse_roles(&back);
                    let ok = match mode {
                        LinMode::Random => is_isomorphic(&back, &norm),
                        _ => is_isomorphic_rooted(&back, &norm),
                    };
                    if !ok {
                        return Err(fail(g, format!("{mode} seed {seed} gives {}", lin.penman)));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Tokenization where every symbol is encoded the same way wherever it
/// occurs, with role symbols replaced by their normalized label.
fn normalized_tokens(u: &UnlabeledGraph, origin: &[Option<usize>], vocab: &Vocabulary) -> Tokenization {
    let mut ids = Vec::new();
    let mut spans = Vec::new();
    for o in origin {
        let label = &u.nodes[o.expect("every symbol has an origin")].label;
        let start = ids.len();
        ids.extend(vocab.encode(&format!(" {label}")));
        spans.push(start..ids.len());
    }
    ids.push(EOS);
    Tokenization { ids, spans }
}

type Key = (usize, usize);
type Mentions = (BTreeMap<Key, usize>, BTreeSet<(Key, Key, usize)>, Vec<Key>, TokenGraph);

/// rep1 token graph with each position named by (node, offset in symbol):
/// the token at each key and the labeled edges between different nodes.
/// Also returns whether every node is mentioned exactly once.
fn keyed_rep1(g: &AmrGraph, mode: LinMode, seed: u64, vocab: &Vocabulary) -> Result<Mentions, String> {
    let u = to_unlabeled(g);
    let lin = linearize(g, mode, Variant::NodesAndEdges, seed);
    let tok = normalized_tokens(&u, &lin.origin, vocab);
    let tg = build_token_graph(&u, &lin, &tok, Rep::Rep1, &RelationTable::structural()).map_err(|e| e.to_string())?;
    let mut key = vec![(usize::MAX, 0); tg.seq_len];
    let mut labels = BTreeMap::new();
    for (o, span) in lin.origin.iter().zip(&tok.spans) {
        for (k, p) in span.clone().enumerate() {
            key[p] = (o.unwrap(), k);
            if let Some(prev) = labels.insert(key[p], tok.ids[p]) {
                if prev != tok.ids[p] {
                    return Err(fail(g, "one node tokenized two ways"));
                }
            }
        }
    }
    let edges = tg
        .edges
        .iter()
        .filter(|e| key[e.src].0 != key[e.tgt].0)
        .map(|e| (key[e.src], key[e.tgt], e.relation))
        .collect();
    Ok((labels, edges, key, tg))
}

/// rep1 token graphs of the three modes describe the same structure: equal
/// after naming positions by (node, offset). For graphs where every node is
/// mentioned once this naming is a bijection, so the full graphs are
/// isomorphic; returns how many graphs were of that kind.
pub fn rep1_mode_invariance(graphs: &[AmrGraph], vocab: &Vocabulary) -> Result<usize, String> {
    let mut bijective = 0;
    for (i, g0) in graphs.iter().enumerate() {
        let g = normalize_inverse_roles(g0);
        let keyed: Vec<_> = MODES.iter().map(|&m| keyed_rep1(&g, m, i as u64, vocab)).collect::<Result<_, _>>()?;
        let (labels, edges, _, _) = &keyed[0];
        for (mode, (l, e, _, _)) in MODES.iter().zip(&keyed).skip(1) {
            if l != labels || e != edges {
                return Err(fail(&g, format!("rep1 structure under {mode} differs from canon")));
            }
        }
        let once = keyed.iter().all(|(l, _, key, _)| key.len() == l.len() + 1);
        if once {
            bijective += 1;
            let full = |(_, _, key, tg): &Mentions| {
                tg.edges.iter().map(|e| (key[e.src], key[e.tgt], e.relation)).collect::<BTreeSet<_>>()
            };
            let base = full(&keyed[0]);
            if keyed.iter().skip(1).any(|k| full(k) != base) {
                return Err(fail(&g, "rep1 token graphs are not isomorphic"));
            }
        }
    }
    Ok(bijective)
}
