//! Synthetic graph-to-text corpus and the JSONL dataset format.
//!
//! One record per line: `{"amr": "<PENMAN>", "text": "<sentence>", "split": "train"}`.
//! Records are assigned to splits by a hash of their sentence; the grammar is
//! one-to-one, so no graph can land in two splits.

mod generate;
mod grammar;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::penman::{parse_penman, serialize_penman, AmrGraph};

pub use generate::{enumerate_graphs, for_each_graph, generate_graph, Chooser, GenParams, RandomChooser};
pub use grammar::{kind_of, realize, Gender, Inventory, Kind, RealizeError, ADJUNCTS, ENTITIES, MODIFIERS, PREDICATES, ROLES};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub amr: String,
    pub text: String,
    pub split: Split,
}

impl DatasetRecord {
    pub fn graph(&self) -> AmrGraph {
        parse_penman(&self.amr).expect("records hold valid PENMAN")
    }
}

pub fn to_jsonl(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses JSONL, checking that every graph parses and every text is nonempty.
pub fn from_jsonl(text: &str) -> Result<Vec<DatasetRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| CorpusError::Record { line: i + 1, msg };
        let r: DatasetRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        parse_penman(&r.amr).map_err(|e| err(format!("amr: {e}")))?;
        if r.text.trim().is_empty() {
            return Err(err("empty text".into()));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, records: &[DatasetRecord]) -> Result<(), CorpusError> {
    fs::write(path, to_jsonl(records))?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<Vec<DatasetRecord>, CorpusError> {
    from_jsonl(&fs::read_to_string(path)?)
}

/// Split bucket of a sentence: 10% dev, 10% test, 80% train.
pub fn split_of(text: &str) -> Split {
    let digest = Sha256::digest(text.as_bytes());
    match digest[0] % 10 {
        0 => Split::Dev,
        1 => Split::Test,
        _ => Split::Train,
    }
}

fn stream(seed: u64, params: GenParams, mut accept: impl FnMut(DatasetRecord) -> bool, attempts: usize) {
    let inv = Inventory::full();
    let mut ch = RandomChooser::new(seed);
    let mut seen = HashSet::new();
    for _ in 0..attempts {
        let g = generate_graph(&mut ch, &inv, params);
        let text = realize(&g).expect("generated graphs are realizable");
        if !seen.insert(text.clone()) {
            continue;
        }
        let record = DatasetRecord {
            amr: serialize_penman(&g),
            split: split_of(&text),
            text,
        };
        if accept(record) {
            return;
        }
    }
}

/// `n` distinct records with hash-assigned splits. Stops early if the graph
/// space is too small to supply `n` distinct sentences.
pub fn generate_corpus(n: usize, seed: u64, max_nodes: usize, reentrancy_rate: f64) -> Vec<DatasetRecord> {
    let params = GenParams {
        max_nodes,
        reentrancy_rate,
        ..GenParams::default()
    };
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    stream(
        seed,
        params,
        |r| {
            out.push(r);
            out.len() >= n
        },
        50 * n + 1000,
    );
    out
}

/// Fills each split to its quota, in generation order.
pub fn generate_splits(train: usize, dev: usize, test: usize, seed: u64, params: GenParams) -> Vec<DatasetRecord> {
    let quota = |s: Split| match s {
        Split::Train => train,
        Split::Dev => dev,
        Split::Test => test,
    };
    let mut counts = [0usize; 3];
    let mut out = Vec::with_capacity(train + dev + test);
    if train + dev + test == 0 {
        return out;
    }
    let total = train + dev + test;
    stream(
        seed,
        params,
        |r| {
            let i = r.split as usize;
            if counts[i] < quota(r.split) {
                counts[i] += 1;
                out.push(r);
            }
            out.len() >= total
        },
        200 * total + 1000,
    );
    out
}

pub fn split_records(records: &[DatasetRecord], split: Split) -> Vec<DatasetRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}
