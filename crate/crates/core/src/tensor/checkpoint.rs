//! Weight checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"SACKPT01"            8-byte magic
//! u64 little-endian      header length H
//! H bytes                JSON header (see [`CheckpointHeader`])
//! payload                little-endian elements, tensors back to back
//! ```
//!
//! Offsets in the header are byte offsets into the payload. The header also
//! carries free-form string metadata (configs, the frozen flag).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::ParamStore;
use super::{Tensor, TensorError};

const MAGIC: &[u8; 8] = b"SACKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    dtype: String,
    tensors: Vec<CheckpointEntry>,
    meta: BTreeMap<String, String>,
}

/// Decoded checkpoint: tensors in file order plus metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub meta: BTreeMap<String, String>,
}

pub fn encode_checkpoint<T: Scalar>(store: &ParamStore<T>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::new();
    for (_, p) in store.iter() {
        tensors.push(CheckpointEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len(),
            trainable: p.trainable,
        });
        for &v in p.value.data() {
            v.write_le(&mut payload);
        }
    }
    let header = CheckpointHeader {
        dtype: T::DTYPE.to_string(),
        tensors,
        meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, TensorError> {
    let bad = |msg: &str| TensorError::Checkpoint(msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[8..16]);
    let hlen = u64::from_le_bytes(len) as usize;
    let body = 16 + hlen;
    if bytes.len() < body {
        return Err(bad("truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(TensorError::Checkpoint(format!(
            "dtype {} cannot load as {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let payload = &bytes[body..];
    let mut params = ParamStore::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * T::BYTES;
        if end > payload.len() {
            return Err(TensorError::Checkpoint(format!("{} out of bounds", entry.name)));
        }
        let data = payload[entry.offset..end]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        let id = params.insert(entry.name.clone(), Tensor::from_vec(&entry.shape, data)?);
        params.get_mut(id).trainable = entry.trainable;
    }
    Ok(Checkpoint {
        params,
        meta: header.meta,
    })
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    meta: &BTreeMap<String, String>,
) -> Result<(), TensorError> {
    fs::write(path, encode_checkpoint(store, meta))
        .map_err(|e| TensorError::Checkpoint(format!("{}: {}", path.display(), e)))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, TensorError> {
    let bytes =
        fs::read(path).map_err(|e| TensorError::Checkpoint(format!("{}: {}", path.display(), e)))?;
    decode_checkpoint(&bytes)
}
