//! Shared plumbing: configs, data, vocabularies, backbones and run directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use structadapt::backbone::{pretrain_backbone, Model};
use structadapt::config::RunConfig;
use structadapt::corpus::{generate_splits, load_jsonl, split_records, DatasetRecord, Split};
use structadapt::graph::RelationTable;
use structadapt::penman::{parse_penman, AmrGraph};
use structadapt::tokenizer::Vocabulary;
use structadapt::train::{prepare, vocab_corpus, DataConfig, Example};

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const BACKBONE_FILE: &str = "backbone.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const RELATIONS_KEY: &str = "relations";

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in overrides {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

/// Graphs in a PENMAN file: blocks separated by blank lines, `#` lines skipped.
pub fn read_graphs(path: &Path) -> Result<Vec<AmrGraph>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut graphs = Vec::new();
    let mut block = String::new();
    let mut flush = |block: &mut String| -> Result<()> {
        if !block.trim().is_empty() {
            graphs.push(parse_penman(block).with_context(|| format!("{}: graph {}", path.display(), graphs.len() + 1))?);
        }
        block.clear();
        Ok(())
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut block)?;
        } else if !line.trim_start().starts_with('#') {
            block.push_str(line);
            block.push('\n');
        }
    }
    flush(&mut block)?;
    if graphs.is_empty() {
        bail!("{}: no graphs", path.display());
    }
    Ok(graphs)
}

pub struct Data {
    pub train: Vec<DatasetRecord>,
    pub dev: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

/// The configured dataset file, or the synthetic corpus.
pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let records = match &cfg.dataset {
        Some(p) => load_jsonl(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let c = &cfg.corpus;
            generate_splits(c.train, c.dev, c.test, c.seed, c.gen)
        }
    };
    let data = Data {
        train: split_records(&records, Split::Train),
        dev: split_records(&records, Split::Dev),
        test: split_records(&records, Split::Test),
    };
    if data.train.is_empty() {
        bail!("dataset has no training records");
    }
    Ok(data)
}

pub fn train_vocab(cfg: &RunConfig, data: &Data) -> Result<Vocabulary> {
    Ok(Vocabulary::train(&vocab_corpus(&data.train), cfg.vocab_size_target)?)
}

/// Denoising-pretrains a fresh backbone on canonical linearizations and
/// sentences of the training split. Returns the model and its loss curve.
pub fn pretrain(cfg: &RunConfig, data: &Data, vocab: &Vocabulary) -> Result<(Model<f32>, Vec<f64>)> {
    let mut bcfg = cfg.backbone.clone();
    bcfg.vocab_size = vocab.len();
    let table = RelationTable::structural();
    let canon: Vec<Example<f32>> = prepare(&data.train, vocab, &table, &DataConfig::default())?;
    let mut seqs = Vec::with_capacity(2 * canon.len());
    for e in canon {
        seqs.push(e.src);
        seqs.push(e.tgt);
    }
    let mut model = Model::new(bcfg, cfg.backbone_seed)?;
    let losses = pretrain_backbone(&mut model, &seqs, &cfg.pretrain)?;
    Ok((model, losses))
}

/// Vocabulary and frozen backbone from a pretraining run directory, or
/// freshly built (and saved into `out`) when `from` is absent.
pub fn backbone(cfg: &RunConfig, data: &Data, from: Option<&Path>, out: &Path) -> Result<(Vocabulary, Model<f32>)> {
    match from {
        Some(dir) => {
            let vocab = Vocabulary::load(&dir.join(VOCAB_FILE)).with_context(|| format!("vocabulary in {}", dir.display()))?;
            let (mut model, _) =
                Model::<f32>::load(&dir.join(BACKBONE_FILE)).with_context(|| format!("backbone in {}", dir.display()))?;
            if model.adapters.is_some() {
                bail!("{} holds adapters; expected a bare backbone", dir.display());
            }
            model.store.set_trainable(|_| false);
            Ok((vocab, model))
        }
        None => {
            let vocab = train_vocab(cfg, data)?;
            let (model, losses) = pretrain(cfg, data, &vocab)?;
            vocab.save(&out.join(VOCAB_FILE))?;
            model.save(&out.join(BACKBONE_FILE), &BTreeMap::new())?;
            write_losses(&out.join("pretrain_log.csv"), &losses)?;
            Ok((vocab, model))
        }
    }
}

pub fn run_dir(out: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(out.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(path, s)?;
    Ok(())
}

/// Relation names stored with a trained model, so decoding rebuilds the
/// same table.
pub fn relations_meta(table: &RelationTable) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert(RELATIONS_KEY.into(), table.names().join(" "));
    meta
}

pub fn relations_from_meta(meta: &BTreeMap<String, String>) -> Result<RelationTable> {
    let names: Vec<String> = meta
        .get(RELATIONS_KEY)
        .context("checkpoint lacks a relation table")?
        .split(' ')
        .map(str::to_string)
        .collect();
    Ok(RelationTable::from_names(&names))
}
