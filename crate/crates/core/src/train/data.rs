//! From dataset records to model-ready examples.

use serde::{Deserialize, Serialize};

use crate::adapters::{ConvGraph, GcnNorm};
use crate::corpus::DatasetRecord;
use crate::graph::{build_token_graph, linearize, to_unlabeled, tokenize_symbols, LinMode, RelationTable, Rep, Variant};
use crate::penman::{graph_stats, normalize_inverse_roles, AmrGraph, GraphStats};
use crate::scalar::Scalar;
use crate::tokenizer::{Vocabulary, EOS};

use super::TrainError;

/// How graphs are turned into encoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataConfig {
    pub mode: LinMode,
    pub variant: Variant,
    pub rep: Rep,
    pub gcn_norm: GcnNorm,
    /// Seeds reconf/random linearizations, mixed with each example's index.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mode: LinMode::Canon,
            variant: Variant::NodesAndEdges,
            rep: Rep::Rep1,
            gcn_norm: GcnNorm::InDegree,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Example<T> {
    /// Linearized graph ids, ending in `</s>`.
    pub src: Vec<usize>,
    /// Sentence ids, ending in `</s>`.
    pub tgt: Vec<usize>,
    pub graph: ConvGraph<T>,
    /// Linearized graph as text.
    pub source: String,
    pub text: String,
    pub stats: GraphStats,
}

fn example_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Encodes one graph/sentence pair. The graph is normalized first, so the
/// stored direction of inverse roles never leaks into the input.
pub fn prepare_example<T: Scalar>(
    g: &AmrGraph,
    text: &str,
    vocab: &Vocabulary,
    relations: &RelationTable,
    cfg: &DataConfig,
    seed: u64,
) -> Result<Example<T>, TrainError> {
    let g = normalize_inverse_roles(g);
    let lin = linearize(&g, cfg.mode, cfg.variant, seed);
    let tok = tokenize_symbols(vocab, &lin.symbols);
    let tg = build_token_graph(&to_unlabeled(&g), &lin, &tok, cfg.rep, relations)?;
    let graph = ConvGraph::new(&tg, relations, cfg.gcn_norm)?;
    let mut tgt = vocab.encode(text);
    tgt.push(EOS);
    Ok(Example {
        src: tok.ids,
        tgt,
        graph,
        source: lin.text(),
        text: text.to_string(),
        stats: graph_stats(&g),
    })
}

pub fn prepare<T: Scalar>(
    records: &[DatasetRecord],
    vocab: &Vocabulary,
    relations: &RelationTable,
    cfg: &DataConfig,
) -> Result<Vec<Example<T>>, TrainError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| prepare_example(&r.graph(), &r.text, vocab, relations, cfg, example_seed(cfg.seed, i)))
        .collect()
}

/// Relation table for `cfg.variant`, with roles taken from `training`.
pub fn relation_table(cfg: &DataConfig, training: &[DatasetRecord]) -> RelationTable {
    let graphs: Vec<AmrGraph> = training.iter().map(|r| r.graph()).collect();
    RelationTable::for_variant(cfg.variant, &graphs)
}

/// Texts a vocabulary should be trained on: sentences plus linearizations in
/// every mode, so role and concept symbols get their own merges.
pub fn vocab_corpus(records: &[DatasetRecord]) -> Vec<String> {
    let mut out = Vec::with_capacity(records.len() * 2);
    for (i, r) in records.iter().enumerate() {
        let g = normalize_inverse_roles(&r.graph());
        out.push(r.text.clone());
        out.push(linearize(&g, LinMode::Canon, Variant::NodesAndEdges, 0).text());
        out.push(linearize(&g, LinMode::Random, Variant::NodesAndEdges, example_seed(0, i)).text());
    }
    out
}
