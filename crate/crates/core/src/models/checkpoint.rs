use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArchConfig, ModelParams};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::meshcore::NormStats;

const MAGIC: &[u8; 8] = b"MSRCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    stats: NormStats,
    tensors: Vec<TensorEntry>,
}

/// Model parameters together with the normalization they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub stats: NormStats,
}

/// Layout: 8-byte magic, little-endian `u64` header length, JSON header
/// (architecture, normalization, tensor table), then every tensor as
/// little-endian `f64` in table order.
pub fn encode_checkpoint(params: &ModelParams, stats: &NormStats) -> Vec<u8> {
    let mut offset = 0;
    let tensors = params
        .store
        .ids()
        .map(|id| {
            let t = params.store.get(id);
            let e = TensorEntry {
                name: params.store.name(id).to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let header = Header {
        arch: params.arch().clone(),
        stats: stats.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.store.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        record: 0,
        message,
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
    let blob = &bytes[16 + len..];
    if !blob.len().is_multiple_of(8) {
        return Err(bad(
            "parameter blob is not a whole number of f64 values".into()
        ));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut named = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| bad(format!("tensor {} runs past the blob", e.name)))?
            .to_vec();
        named.push((e.name, Tensor::new(e.shape, data)?));
    }
    let mut params = ModelParams::new(header.arch, 0)?;
    params.store.load_values(named)?;
    Ok(Checkpoint {
        params,
        stats: header.stats,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    stats: &NormStats,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, stats)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
