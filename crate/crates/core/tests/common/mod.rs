//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rand::Rng;
use structadapt::adapters::{AdapterConfig, AdapterKind};
use structadapt::backbone::{BackboneConfig, Model, TrainMode};
use structadapt::corpus::{generate_corpus, generate_graph, GenParams, Inventory, RandomChooser};
use structadapt::graph::RelationTable;
use structadapt::penman::AmrGraph;
use structadapt::tensor::gradcheck::{check_params, CheckReport};
use structadapt::tensor::{Tape, Tensor};
use structadapt::tokenizer::Vocabulary;
use structadapt::train::{prepare, vocab_corpus, DataConfig, Example};

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Small f64 model (2+2 layers, d = 16) with one short training pair.
/// Adapter up-projections are randomized so every adapter weight gets a
/// non-trivial gradient.
pub fn tiny_model(adapter: Option<AdapterKind>, bases: usize) -> (Model<f64>, Example<f64>) {
    let recs = generate_corpus(40, 3, 4, 0.5);
    let vocab = Vocabulary::train(&vocab_corpus(&recs), 280).unwrap();
    let table = RelationTable::structural();
    let examples: Vec<Example<f64>> = prepare(&recs, &vocab, &table, &DataConfig::default()).unwrap();
    let ex = examples.into_iter().min_by_key(|e| e.src.len() + e.tgt.len()).unwrap();
    let cfg = BackboneConfig {
        layers: 2,
        d_model: 16,
        heads: 2,
        d_ff: 32,
        vocab_size: vocab.len(),
        max_len: 64,
    };
    let mut model = Model::<f64>::new(cfg, 11).unwrap();
    match adapter {
        None => model.set_mode(TrainMode::FinetuneAll),
        Some(kind) => {
            let acfg = AdapterConfig {
                m: 4,
                kind,
                relations: table.len(),
                bases,
                ..AdapterConfig::default()
            };
            model.attach_adapters(acfg, 5).unwrap();
            model.set_mode(TrainMode::AdaptersOnly);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for p in model.store.iter_mut() {
                if p.name.ends_with(".up") {
                    p.value = Tensor::uniform(p.value.shape(), 0.5, &mut rng);
                }
            }
        }
    }
    (model, ex)
}

/// Finite-difference check of the training loss, probing `per_param`
/// coordinates of every trainable tensor.
pub fn check_model(model: &mut Model<f64>, ex: &Example<f64>, per_param: usize) -> CheckReport {
    let mut store = std::mem::take(&mut model.store);
    let report = check_params(&mut store, Some(per_param), 1, |tape: &mut Tape<f64>, s| {
        let mut m = model.clone();
        m.store = s.clone();
        m.loss(tape, &ex.src, &ex.tgt, Some(&ex.graph))
    })
    .unwrap();
    model.store = store;
    report
}

/// Per-layer sizes written out by hand: layer norm (2d), down-projection(s),
/// up-projection (d·m).
pub fn closed_form(cfg: &AdapterConfig, layers: usize, d: usize) -> usize {
    let (m, dm) = (cfg.m, cfg.decoder_m());
    let down = match cfg.kind {
        AdapterKind::Adapt | AdapterKind::StructadaptGcn => m * d,
        AdapterKind::StructadaptRgcn if cfg.bases == 0 => cfg.relations * m * d,
        AdapterKind::StructadaptRgcn => cfg.relations * cfg.bases + cfg.bases * m * d,
    };
    let enc = if cfg.encoder { 2 * d + down + d * m } else { 0 };
    let dec = if cfg.decoder { 2 * d + dm * d + d * dm } else { 0 };
    layers * (enc + dec)
}

const ROLES: [&str; 8] = [":ARG0", ":ARG1", ":ARG2", ":mod", ":poss", ":location", ":ARG0-of", ":op1"];
const CONCEPTS: [&str; 8] = ["want-01", "boy", "girl", "see-01", "big", "city", "name", "and"];

/// Connected graph of arbitrary shape: each node hangs off an earlier one in
/// a random direction, then extra edges add re-entrancies and cycles.
/// Constants stay leaves with one incoming edge, as PENMAN requires.
pub fn arbitrary_graph(seed: u64, max_nodes: usize) -> AmrGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes);
    let mut g = AmrGraph::new("n0", CONCEPTS[rng.gen_range(0..CONCEPTS.len())]);
    let mut constants = Vec::new();
    for i in 1..n {
        let prev = loop {
            let p = rng.gen_range(0..i);
            if !constants.contains(&p) {
                break p;
            }
        };
        let role = ROLES[rng.gen_range(0..ROLES.len())];
        if rng.gen_bool(0.15) {
            let c = g.add_constant(&format!("{}", rng.gen_range(1..99)));
            constants.push(c);
            g.add_edge(prev, role, c);
        } else {
            let v = g.add_node(&format!("n{i}"), CONCEPTS[rng.gen_range(0..CONCEPTS.len())]).unwrap();
            if rng.gen_bool(0.7) {
                g.add_edge(prev, role, v);
            } else {
                g.add_edge(v, role, prev);
            }
        }
    }
    let extra = rng.gen_range(0..=n / 3);
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !constants.contains(&a) && !constants.contains(&b) {
            g.add_edge(a, ROLES[rng.gen_range(0..ROLES.len())], b);
        }
    }
    g
}

/// `count` graphs: half from the corpus grammar, half arbitrary.
pub fn sample_graphs(count: usize, seed: u64) -> Vec<AmrGraph> {
    let inv = Inventory::full();
    (0..count as u64)
        .map(|i| {
            if i % 2 == 0 {
                let params = GenParams {
                    max_nodes: 4 + (i as usize / 2) % 13,
                    reentrancy_rate: 0.4,
                    max_depth: 2,
                };
                generate_graph(&mut RandomChooser::new(seed ^ i), &inv, params)
            } else {
                arbitrary_graph(seed ^ i, 12)
            }
        })
        .collect()
}
pub mod grad;
pub mod structure;
