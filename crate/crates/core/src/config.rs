//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, keys live in four namespaces:
//! `backbone.*`, `adapter.*`, `train.*` and `data.*`. Unknown keys are
//! errors. [`RunConfig::to_text`] writes every key, so a snapshot parses back
//! to the same configuration.
//!
//! ```text
//! backbone.d_model = 64
//! adapter.kind = structadapt_rgcn   # or adapt, structadapt_gcn, none
//! train.mode = adapters_only
//! data.linearization = random
//! ```

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::adapters::{AdapterConfig, AdapterKind};
use crate::backbone::{BackboneConfig, PretrainConfig};
use crate::corpus::GenParams;
use crate::graph::LinMode;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, byte {offset}: {msg}")]
    Syntax { line: usize, offset: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Synthetic corpus settings used when no dataset file is given.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
    pub gen: GenParams,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            train: 2000,
            dev: 200,
            test: 200,
            seed: 0,
            gen: GenParams::default(),
        }
    }
}

/// Settings of the experiment harnesses.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub seeds: Vec<u64>,
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub samples: usize,
    pub lowdata_seeds: usize,
    pub modes: Vec<LinMode>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seeds: vec![0, 1, 2, 3],
            dims: vec![4, 8, 16, 32],
            sizes: vec![250, 500, 1000],
            samples: 5,
            lowdata_seeds: 2,
            modes: vec![LinMode::Canon, LinMode::Reconf, LinMode::Random],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    pub backbone_seed: u64,
    pub pretrain: PretrainConfig,
    /// `None` trains without adapters.
    pub adapter: Option<AdapterConfig>,
    pub train: TrainConfig,
    pub experiments: ExperimentSpec,
    pub corpus: CorpusSpec,
    /// JSONL dataset; the synthetic corpus is used when absent.
    pub dataset: Option<PathBuf>,
    pub vocab_size_target: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backbone: BackboneConfig::default(),
            backbone_seed: 0,
            pretrain: PretrainConfig::default(),
            adapter: Some(AdapterConfig::default()),
            train: TrainConfig::default(),
            experiments: ExperimentSpec::default(),
            corpus: CorpusSpec::default(),
            dataset: None,
            vocab_size_target: 512,
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse).collect()
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: Display>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "none".into(), |v| v.to_string())
}

fn parse_opt<T: FromStr>(v: &str) -> Result<Option<T>, String>
where
    T::Err: Display,
{
    if v == "none" {
        Ok(None)
    } else {
        parse(v).map(Some)
    }
}

impl RunConfig {
    fn adapter_mut(&mut self) -> &mut AdapterConfig {
        self.adapter.get_or_insert_with(AdapterConfig::default)
    }

    /// Applies one setting. `Ok(false)` means the key is unknown.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool, String> {
        let b = &mut self.backbone;
        match key {
            "backbone.layers" => b.layers = parse(v)?,
            "backbone.d_model" => b.d_model = parse(v)?,
            "backbone.heads" => b.heads = parse(v)?,
            "backbone.d_ff" => b.d_ff = parse(v)?,
            "backbone.vocab_size" => b.vocab_size = parse(v)?,
            "backbone.max_len" => b.max_len = parse(v)?,
            "backbone.seed" => self.backbone_seed = parse(v)?,
            "backbone.pretrain_steps" => self.pretrain.steps = parse(v)?,
            "backbone.pretrain_lr" => self.pretrain.lr = parse(v)?,
            "backbone.pretrain_batch" => self.pretrain.batch = parse(v)?,
            "backbone.mask_rate" => self.pretrain.mask_rate = parse(v)?,
            "backbone.pretrain_seed" => self.pretrain.seed = parse(v)?,
            "adapter.kind" => {
                if v == "none" {
                    self.adapter = None;
                } else {
                    self.adapter_mut().kind = parse::<AdapterKind>(v)?;
                }
            }
            "adapter.m" => self.adapter_mut().m = parse(v)?,
            "adapter.dec_m" => self.adapter_mut().dec_m = parse_opt(v)?,
            "adapter.encoder" => self.adapter_mut().encoder = parse_bool(v)?,
            "adapter.decoder" => self.adapter_mut().decoder = parse_bool(v)?,
            "adapter.bases" => self.adapter_mut().bases = parse(v)?,
            "adapter.gcn_norm" => self.train.data.gcn_norm = parse(v)?,
            "train.lr" => self.train.lr = parse_opt(v)?,
            "train.batch" => self.train.batch = parse(v)?,
            "train.beam" => self.train.beam = parse(v)?,
            "train.max_steps" => self.train.max_steps = parse(v)?,
            "train.patience" => self.train.patience = parse(v)?,
            "train.seed" => self.train.seed = parse(v)?,
            "train.mode" => self.train.mode = parse(v)?,
            "train.max_decode_len" => self.train.max_decode_len = parse(v)?,
            "train.eval_every" => self.train.eval_every = parse(v)?,
            "train.seeds" => self.experiments.seeds = parse_list(v)?,
            "train.dims" => self.experiments.dims = parse_list(v)?,
            "train.sizes" => self.experiments.sizes = parse_list(v)?,
            "train.samples" => self.experiments.samples = parse(v)?,
            "train.lowdata_seeds" => self.experiments.lowdata_seeds = parse(v)?,
            "train.modes" => self.experiments.modes = parse_list(v)?,
            "data.linearization" => self.train.data.mode = parse(v)?,
            "data.variant" => self.train.data.variant = parse(v)?,
            "data.rep" => self.train.data.rep = parse(v)?,
            "data.seed" => self.train.data.seed = parse(v)?,
            "data.dataset" => self.dataset = parse_opt(v)?,
            "data.vocab_size" => self.vocab_size_target = parse(v)?,
            "data.train" => self.corpus.train = parse(v)?,
            "data.dev" => self.corpus.dev = parse(v)?,
            "data.test" => self.corpus.test = parse(v)?,
            "data.corpus_seed" => self.corpus.seed = parse(v)?,
            "data.max_nodes" => self.corpus.gen.max_nodes = parse(v)?,
            "data.reentrancy_rate" => self.corpus.gen.reentrancy_rate = parse(v)?,
            "data.max_depth" => self.corpus.gen.max_depth = parse(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = &self.backbone;
        let a = self.adapter.clone().unwrap_or_default();
        let t = &self.train;
        let x = &self.experiments;
        let mut out = vec![
            ("backbone.layers", b.layers.to_string()),
            ("backbone.d_model", b.d_model.to_string()),
            ("backbone.heads", b.heads.to_string()),
            ("backbone.d_ff", b.d_ff.to_string()),
            ("backbone.vocab_size", b.vocab_size.to_string()),
            ("backbone.max_len", b.max_len.to_string()),
            ("backbone.seed", self.backbone_seed.to_string()),
            ("backbone.pretrain_steps", self.pretrain.steps.to_string()),
            ("backbone.pretrain_lr", self.pretrain.lr.to_string()),
            ("backbone.pretrain_batch", self.pretrain.batch.to_string()),
            ("backbone.mask_rate", self.pretrain.mask_rate.to_string()),
            ("backbone.pretrain_seed", self.pretrain.seed.to_string()),
            ("adapter.kind", self.adapter.as_ref().map_or_else(|| "none".into(), |a| a.kind.to_string())),
        ];
        if self.adapter.is_some() {
            out.extend([
                ("adapter.m", a.m.to_string()),
                ("adapter.dec_m", opt(&a.dec_m)),
                ("adapter.encoder", a.encoder.to_string()),
                ("adapter.decoder", a.decoder.to_string()),
                ("adapter.bases", a.bases.to_string()),
            ]);
        }
        out.extend([
            ("adapter.gcn_norm", t.data.gcn_norm.to_string()),
            ("train.lr", opt(&t.lr)),
            ("train.batch", t.batch.to_string()),
            ("train.beam", t.beam.to_string()),
            ("train.max_steps", t.max_steps.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.mode", t.mode.to_string()),
            ("train.max_decode_len", t.max_decode_len.to_string()),
            ("train.eval_every", t.eval_every.to_string()),
            ("train.seeds", join(&x.seeds)),
            ("train.dims", join(&x.dims)),
            ("train.sizes", join(&x.sizes)),
            ("train.samples", x.samples.to_string()),
            ("train.lowdata_seeds", x.lowdata_seeds.to_string()),
            ("train.modes", join(&x.modes)),
            ("data.linearization", t.data.mode.to_string()),
            ("data.variant", t.data.variant.to_string()),
            ("data.rep", t.data.rep.to_string()),
            ("data.seed", t.data.seed.to_string()),
            ("data.dataset", opt(&self.dataset.as_ref().map(|p| p.display()))),
            ("data.vocab_size", self.vocab_size_target.to_string()),
            ("data.train", self.corpus.train.to_string()),
            ("data.dev", self.corpus.dev.to_string()),
            ("data.test", self.corpus.test.to_string()),
            ("data.corpus_seed", self.corpus.seed.to_string()),
            ("data.max_nodes", self.corpus.gen.max_nodes.to_string()),
            ("data.reentrancy_rate", self.corpus.gen.reentrancy_rate.to_string()),
            ("data.max_depth", self.corpus.gen.max_depth.to_string()),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies the settings in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut offset = 0;
        for (i, raw) in text.split_inclusive('\n').enumerate() {
            let line = i + 1;
            let start = offset;
            offset += raw.len();
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                let col = raw.len() - raw.trim_start().len();
                return Err(ConfigError::Syntax {
                    line,
                    offset: start + col,
                    msg: "expected `key = value`".into(),
                });
            };
            self.apply_one(line, key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` override, such as a command-line flag.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            offset: 0,
            msg: format!("override `{kv}` is not `key=value`"),
        })?;
        self.apply_one(0, k.trim(), v.trim())
    }

    fn apply_one(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.set(key, value) {
            Ok(true) => Ok(()),
            Ok(false) => Err(ConfigError::UnknownKey { line, key: key.into() }),
            Err(msg) => Err(ConfigError::BadValue { line, key: key.into(), msg }),
        }
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::TrainMode;
    use crate::graph::{Rep, Variant};

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("backbone.d_model = 32\nadapter.kind = adapt\nadapter.dec_m = 4\ntrain.lr = 0.01\ndata.rep = rep3\ndata.variant = nodes_only\ntrain.modes = canon,random\n")
            .unwrap();
        assert_eq!(c.backbone.d_model, 32);
        assert_eq!(c.train.data.rep, Rep::Rep3);
        assert_eq!(c.train.data.variant, Variant::NodesOnly);
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        let none = RunConfig::from_text("adapter.kind = none\ntrain.mode = finetune_all").unwrap();
        assert_eq!(none.adapter, None);
        assert_eq!(none.train.mode, TrainMode::FinetuneAll);
        assert_eq!(RunConfig::from_text(&none.to_text()).unwrap(), none);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::from_text("# toy\n\ntrain.batch = 8  # bigger\n").unwrap();
        assert_eq!(c.train.batch, 8);
    }

    #[test]
    fn errors_carry_positions() {
        match RunConfig::from_text("train.batch = 2\ntrain.bogus = 1\n") {
            Err(ConfigError::UnknownKey { line, key }) => assert_eq!((line, key.as_str()), (2, "train.bogus")),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_text("train.batch = 2\n  oops\n") {
            Err(ConfigError::Syntax { line, offset, .. }) => assert_eq!((line, offset), (2, 18)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_text("train.batch = two"), Err(ConfigError::BadValue { line: 1, .. })));
        assert!(matches!(RunConfig::from_text("data.linearization = sideways"), Err(ConfigError::BadValue { .. })));
    }
}
