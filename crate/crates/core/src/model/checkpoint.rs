//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `ILDVITCK` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 | header length `L` (`u32`) |
//! | L | UTF-8 JSON header: `config`, `tensors`, `metadata` |
//! | 8 x n | every tensor's values as `f64`, in header order |
//! | 32 | SHA-256 of all preceding bytes |
//!
//! Each `tensors` entry records `name`, `shape`, `dtype` (always `"f64"`)
//! and `offset`, the byte offset of its first value relative to the start
//! of the data section. Tensors are stored row-major and back to back.
//!
//! Values are stored at full precision, so a save/load round trip is
//! bit-exact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ILDVITCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    metadata: BTreeMap<String, String>,
}

pub fn checkpoint_bytes(params: &ModelParams, metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let mut offset = 0;
    let header = Header {
        config: params.config.clone(),
        tensors: params
            .tensors
            .iter()
            .map(|t| {
                let entry = TensorEntry {
                    name: t.name.clone(),
                    shape: t.tensor.shape().to_vec(),
                    dtype: "f64".into(),
                    offset,
                };
                offset += 8 * t.tensor.numel();
                entry
            })
            .collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.count() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &params.tensors {
        for v in t.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelParams, BTreeMap<String, String>)> {
    if bytes.len() < 16 + 32 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let json = body
        .get(16..16 + hlen)
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
    let data = &body[16 + hlen..];
    let mut expected_offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        if entry.dtype != "f64" {
            return Err(corrupt(format!("{}: unsupported dtype {}", entry.name, entry.dtype)));
        }
        if entry.offset != expected_offset {
            return Err(corrupt(format!("{}: unexpected offset {}", entry.name, entry.offset)));
        }
        let n: usize = entry.shape.iter().product();
        expected_offset += 8 * n;
        let chunk = data
            .get(entry.offset..expected_offset)
            .ok_or_else(|| corrupt(format!("{}: truncated values", entry.name)))?;
        let values = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(entry.shape.clone(), values)?);
    }
    if data.len() != expected_offset {
        return Err(corrupt(format!("{} trailing bytes", data.len() - expected_offset)));
    }
    let params = ModelParams::from_tensors(header.config, tensors)?;
    for (entry, t) in header.tensors.iter().zip(&params.tensors) {
        if entry.name != t.name {
            return Err(corrupt(format!("tensor {} where {} expected", entry.name, t.name)));
        }
    }
    Ok((params, header.metadata))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let bytes = checkpoint_bytes(params, metadata);
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
