//! Experiment harnesses: adapter width sweep, low-data runs, linearization
//! robustness and encoder/decoder placement.
//!
//! Every harness is a list of independent runs, each fully determined by its
//! spec; results are aggregated into CSV rows of means and sample standard
//! deviations over seeds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{count_params, AdapterConfig};
use crate::backbone::{trainable_mask, Model, TrainMode};
use crate::corpus::DatasetRecord;
use crate::graph::LinMode;
use crate::scalar::Scalar;
use crate::tokenizer::Vocabulary;

use super::{evaluate, prepare, relation_table, train, DataConfig, TrainConfig, TrainError};

/// Shared inputs of every run: a frozen pretrained backbone, its
/// vocabulary, the data splits and the base training settings.
pub struct Setup<'a, T> {
    pub backbone: &'a Model<T>,
    pub vocab: &'a Vocabulary,
    pub train: &'a [DatasetRecord],
    pub dev: &'a [DatasetRecord],
    pub test: &'a [DatasetRecord],
    pub train_cfg: TrainConfig,
    /// Adapter settings the harnesses start from.
    pub adapter: AdapterConfig,
    /// Beam width for the final test evaluation.
    pub beam: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub adapter: Option<AdapterConfig>,
    pub mode: TrainMode,
    pub data: DataConfig,
    pub seed: u64,
    /// Train on a seeded subsample of this size.
    pub subsample: Option<(usize, u64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub seed: u64,
    pub bleu: f64,
    pub chrf: f64,
    pub dev_bleu: Option<f64>,
    pub trainable: usize,
    pub fraction: f64,
    pub steps: usize,
}

/// `size` records drawn without replacement, seeded by `sample`.
pub fn subsample(records: &[DatasetRecord], size: usize, sample: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample);
    let mut out: Vec<DatasetRecord> = records.choose_multiple(&mut rng, size.min(records.len())).cloned().collect();
    // keep corpus order so only the selection depends on the seed
    out.sort_by_key(|r| records.iter().position(|x| x == r));
    out
}

pub fn run_one<T: Scalar>(setup: &Setup<T>, spec: &RunSpec) -> Result<RunResult, TrainError> {
    let train_records = match spec.subsample {
        Some((size, sample)) => subsample(setup.train, size, sample),
        None => setup.train.to_vec(),
    };
    let table = relation_table(&spec.data, &train_records);
    let mut model = setup.backbone.clone();
    if let Some(a) = &spec.adapter {
        let a = AdapterConfig {
            relations: table.len(),
            gcn_norm: spec.data.gcn_norm,
            ..a.clone()
        };
        model.attach_adapters(a, spec.seed)?;
    }
    let cfg = TrainConfig {
        mode: spec.mode,
        data: spec.data,
        seed: spec.seed,
        ..setup.train_cfg.clone()
    };
    let tr = prepare(&train_records, setup.vocab, &table, &spec.data)?;
    let dev = prepare(setup.dev, setup.vocab, &table, &spec.data)?;
    let test = prepare(setup.test, setup.vocab, &table, &spec.data)?;
    let outcome = train(&mut model, &tr, &dev, setup.vocab, &cfg)?;
    let report = evaluate(&model, &test, setup.vocab, setup.beam, cfg.max_decode_len)?;
    Ok(RunResult {
        label: spec.label.clone(),
        seed: spec.seed,
        bleu: report.bleu,
        chrf: report.chrf,
        dev_bleu: outcome.best_dev_bleu,
        trainable: report.trainable,
        fraction: report.trainable_fraction,
        steps: outcome.steps,
    })
}

/// Runs every spec; runs are independent, so they execute in parallel and
/// come back in spec order.
pub fn run_all<T: Scalar>(setup: &Setup<T>, specs: &[RunSpec]) -> Result<Vec<RunResult>, TrainError> {
    specs.par_iter().map(|s| run_one(setup, s)).collect()
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub setting: String,
    pub runs: usize,
    pub trainable: usize,
    pub fraction: f64,
    pub bleu_mean: f64,
    pub bleu_std: f64,
    pub chrf_mean: f64,
    pub chrf_std: f64,
}

/// One row per distinct label, in first-seen order.
pub fn summarize(experiment: &str, results: &[RunResult]) -> Vec<SummaryRow> {
    let mut labels: Vec<&str> = Vec::new();
    for r in results {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|l| {
            let group: Vec<&RunResult> = results.iter().filter(|r| r.label == l).collect();
            let (bleu_mean, bleu_std) = mean_std(&group.iter().map(|r| r.bleu).collect::<Vec<_>>());
            let (chrf_mean, chrf_std) = mean_std(&group.iter().map(|r| r.chrf).collect::<Vec<_>>());
            SummaryRow {
                experiment: experiment.to_string(),
                setting: l.to_string(),
                runs: group.len(),
                trainable: group[0].trainable,
                fraction: group[0].fraction,
                bleu_mean,
                bleu_std,
                chrf_mean,
                chrf_std,
            }
        })
        .collect()
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

fn adapters_spec(label: String, adapter: AdapterConfig, data: DataConfig, seed: u64) -> RunSpec {
    RunSpec {
        label,
        adapter: Some(adapter),
        mode: TrainMode::AdaptersOnly,
        data,
        seed,
        subsample: None,
    }
}

/// Trainable parameters versus test scores over adapter widths.
pub fn sweep_specs<T>(setup: &Setup<T>, dims: &[usize], seeds: &[u64]) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for &m in dims {
        for &seed in seeds {
            let a = AdapterConfig {
                m,
                dec_m: None,
                ..setup.adapter.clone()
            };
            out.push(adapters_spec(format!("m={m}"), a, setup.train_cfg.data, seed));
        }
    }
    out
}

pub fn sweep_hidden<T: Scalar>(setup: &Setup<T>, dims: &[usize], seeds: &[u64]) -> Result<Vec<SummaryRow>, TrainError> {
    Ok(summarize("sweep_hidden", &run_all(setup, &sweep_specs(setup, dims, seeds))?))
}

/// One low-data run: training subsample `sample` of `size` records, trained
/// with `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LowDataRun {
    pub size: usize,
    pub sample: u64,
    pub seed: u64,
}

/// `samples` subsamples × `seeds` training seeds per size.
pub fn low_data_schedule(sizes: &[usize], samples: usize, seeds: usize) -> Vec<LowDataRun> {
    let mut out = Vec::with_capacity(sizes.len() * samples * seeds);
    for &size in sizes {
        for sample in 0..samples as u64 {
            for seed in 0..seeds as u64 {
                out.push(LowDataRun { size, sample, seed });
            }
        }
    }
    out
}

pub fn low_data_specs<T>(setup: &Setup<T>, sizes: &[usize], samples: usize, seeds: usize) -> Vec<RunSpec> {
    low_data_schedule(sizes, samples, seeds)
        .into_iter()
        .map(|r| {
            let mut s = adapters_spec(format!("size={}", r.size), setup.adapter.clone(), setup.train_cfg.data, r.seed);
            s.subsample = Some((r.size, r.sample));
            s
        })
        .collect()
}

pub fn low_data<T: Scalar>(setup: &Setup<T>, sizes: &[usize], samples: usize, seeds: usize) -> Result<Vec<SummaryRow>, TrainError> {
    Ok(summarize("low_data", &run_all(setup, &low_data_specs(setup, sizes, samples, seeds))?))
}

pub fn robustness_specs<T>(setup: &Setup<T>, modes: &[LinMode], seeds: &[u64]) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for &mode in modes {
        for &seed in seeds {
            let data = DataConfig { mode, ..setup.train_cfg.data };
            out.push(adapters_spec(format!("lin={mode}"), setup.adapter.clone(), data, seed));
        }
    }
    out
}

pub fn linearization_robustness<T: Scalar>(setup: &Setup<T>, modes: &[LinMode], seeds: &[u64]) -> Result<Vec<SummaryRow>, TrainError> {
    Ok(summarize("linearization_robustness", &run_all(setup, &robustness_specs(setup, modes, seeds))?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Encoder,
    Decoder,
    Both,
}

impl Placement {
    pub const ALL: [Placement; 3] = [Placement::Encoder, Placement::Decoder, Placement::Both];

    pub fn name(self) -> &'static str {
        match self {
            Placement::Encoder => "enc",
            Placement::Decoder => "dec",
            Placement::Both => "enc+dec",
        }
    }
}

/// Closed-form adapter parameter count over `layers` layers per stack.
pub fn adapter_params(cfg: &AdapterConfig, d: usize, layers: usize) -> usize {
    let enc = if cfg.encoder { cfg.encoder_layer_params(d) } else { 0 };
    let dec = if cfg.decoder { cfg.decoder_layer_params(d) } else { 0 };
    layers * (enc + dec)
}

fn solve_width(target: usize, count: impl Fn(usize) -> usize) -> Option<usize> {
    // counts grow strictly with the width
    let mut m = 1;
    while count(m) < target {
        m += 1;
    }
    (count(m) == target).then_some(m)
}

/// Adapter configs for the three placements holding the same number of
/// trainable parameters. The shared width `m` of the encoder+decoder setup
/// is moved to the nearest value for which both single-side widths solve
/// exactly.
pub fn placement_configs(base: &AdapterConfig, m: usize, d: usize, layers: usize) -> Vec<(Placement, AdapterConfig)> {
    let try_m = |m0: usize| -> Option<Vec<(Placement, AdapterConfig)>> {
        let both = AdapterConfig {
            m: m0,
            dec_m: None,
            encoder: true,
            decoder: true,
            ..base.clone()
        };
        let target = adapter_params(&both, d, layers);
        let enc_m = solve_width(target, |w| {
            adapter_params(&AdapterConfig { m: w, decoder: false, ..both.clone() }, d, layers)
        })?;
        let dec_m = solve_width(target, |w| {
            adapter_params(&AdapterConfig { dec_m: Some(w), encoder: false, ..both.clone() }, d, layers)
        })?;
        Some(vec![
            (Placement::Encoder, AdapterConfig { m: enc_m, decoder: false, ..both.clone() }),
            (Placement::Decoder, AdapterConfig { dec_m: Some(dec_m), encoder: false, ..both.clone() }),
            (Placement::Both, both),
        ])
    };
    for delta in 0..=m.max(64) {
        for m0 in [m + delta, m.saturating_sub(delta)] {
            if m0 >= 1 {
                if let Some(c) = try_m(m0) {
                    return c;
                }
            }
        }
    }
    unreachable!("an exact width always exists for some nearby m")
}

pub fn ablation_specs<T: Scalar>(setup: &Setup<T>, m: usize, seeds: &[u64]) -> Vec<RunSpec> {
    let base = AdapterConfig {
        relations: relation_table(&setup.train_cfg.data, setup.train).len(),
        ..setup.adapter.clone()
    };
    let mut out = Vec::new();
    for (p, cfg) in placement_configs(&base, m, setup.backbone.cfg.d_model, setup.backbone.cfg.layers) {
        for &seed in seeds {
            out.push(adapters_spec(p.name().to_string(), cfg.clone(), setup.train_cfg.data, seed));
        }
    }
    out
}

pub fn placement_ablation<T: Scalar>(setup: &Setup<T>, m: usize, seeds: &[u64]) -> Result<Vec<SummaryRow>, TrainError> {
    Ok(summarize("placement_ablation", &run_all(setup, &ablation_specs(setup, m, seeds))?))
}

/// Trainable count of `cfg` on a copy of `backbone`, as `count_params` sees it.
pub fn measured_adapter_params<T: Scalar>(backbone: &Model<T>, cfg: &AdapterConfig) -> Result<usize, TrainError> {
    let mut m = backbone.clone();
    m.attach_adapters(cfg.clone(), 0)?;
    Ok(count_params(&m.store, trainable_mask(TrainMode::AdaptersOnly, m.cfg.layers)).trainable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::AdapterKind;
    use crate::backbone::BackboneConfig;

    #[test]
    fn low_data_run_count() {
        let runs = low_data_schedule(&[1000], 5, 2);
        assert_eq!(runs.len(), 10);
        let distinct: std::collections::HashSet<_> = runs.iter().map(|r| (r.sample, r.seed)).collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn placements_hold_equal_params() {
        let backbone: Model<f64> = Model::new(
            BackboneConfig {
                layers: 2,
                d_model: 16,
                heads: 2,
                d_ff: 32,
                vocab_size: 300,
                max_len: 40,
            },
            0,
        )
        .unwrap();
        for kind in [AdapterKind::Adapt, AdapterKind::StructadaptGcn, AdapterKind::StructadaptRgcn] {
            let base = AdapterConfig { kind, ..AdapterConfig::default() };
            let cfgs = placement_configs(&base, 8, 16, 2);
            let counts: Vec<usize> = cfgs.iter().map(|(_, c)| measured_adapter_params(&backbone, c).unwrap()).collect();
            assert!(counts.iter().all(|&c| c == counts[0]), "{kind:?}: {counts:?}");
            assert_eq!(counts[0], adapter_params(&cfgs[2].1, 16, 2));
        }
        // plain adapters solve at the requested width
        let (_, both) = &placement_configs(&AdapterConfig { kind: AdapterKind::Adapt, ..AdapterConfig::default() }, 8, 16, 2)[2];
        assert_eq!(both.m, 8);
    }

    #[test]
    fn subsample_is_seeded() {
        let recs = crate::corpus::generate_corpus(40, 3, 8, 0.3);
        assert_eq!(subsample(&recs, 10, 1), subsample(&recs, 10, 1));
        assert_ne!(subsample(&recs, 10, 1), subsample(&recs, 10, 2));
        assert_eq!(subsample(&recs, 10, 1).len(), 10);
    }
}
