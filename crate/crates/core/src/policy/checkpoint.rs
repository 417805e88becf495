//! Checkpoint files: magic, JSON header, then little-endian f32 tensor data.
//!
//! Layout: `NAVFCKPT`, u32 header length, header bytes, tensor values in header
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::FusionConstants;
use crate::error::{Error, Result};
use crate::io::{read_bytes, short_hash, write_atomic};
use crate::policy::{Policy, PolicyConfig};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"NAVFCKPT";
pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub schema: u32,
    pub config: PolicyConfig,
    pub fusion: FusionConstants,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance (training run, dataset, validation loss).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn to_bytes<S: Scalar>(policy: &Policy<S>, meta: serde_json::Value) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (name, t) in policy.network.tensors() {
        entries.push(TensorEntry { name, shape: t.shape.clone(), offset });
        offset += t.len();
        for v in &t.data {
            data.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        schema: CHECKPOINT_SCHEMA,
        config: policy.config.clone(),
        fusion: policy.fusion,
        tensors: entries,
        meta,
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + hjson.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&data);
    out
}

pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<(Policy<S>, CheckpointHeader)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[12..hend]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.schema != CHECKPOINT_SCHEMA {
        return Err(Error::Checkpoint(format!("unsupported checkpoint schema {}", header.schema)));
    }
    let data = &bytes[hend..];
    let mut policy = Policy::<S>::init(header.config.clone())?;
    policy.fusion = header.fusion;
    let names: Vec<(String, Vec<usize>)> =
        policy.network.tensors().iter().map(|(n, t)| (n.clone(), t.shape.clone())).collect();
    if names.len() != header.tensors.len() {
        return Err(bad("tensor count does not match the configuration"));
    }
    for ((entry, (name, shape)), t) in header.tensors.iter().zip(&names).zip(policy.network.tensors_mut()) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::Checkpoint(format!("tensor {} {:?} does not match expected {name} {shape:?}", entry.name, entry.shape)));
        }
        let start = entry.offset * 4;
        let end = start + t.len() * 4;
        if end > data.len() {
            return Err(bad("truncated tensor data"));
        }
        for (i, chunk) in data[start..end].chunks_exact(4).enumerate() {
            t.data[i] = S::c(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
    }
    Ok((policy, header))
}

pub fn save<S: Scalar>(policy: &Policy<S>, meta: serde_json::Value, path: &Path) -> Result<String> {
    let bytes = to_bytes(policy, meta);
    write_atomic(path, &bytes)?;
    Ok(short_hash(&bytes))
}

pub fn load<S: Scalar>(path: &Path) -> Result<(Policy<S>, CheckpointHeader)> {
    from_bytes(&read_bytes(path)?)
}

/// Content hash of a checkpoint file, as embedded in report file names.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(short_hash(&read_bytes(path)?))
}
