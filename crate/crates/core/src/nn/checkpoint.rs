//! Named-tensor archives.
//!
//! Layout: the 8-byte magic `MCSCKPT1`, a little-endian `u32` header length, a JSON header
//! (model tag, config, config hash, tensor names and shapes), then every tensor's values as
//! little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParameterSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCSCKPT1";

/// Hex SHA-256 of the canonical JSON encoding of `config`.
pub fn config_hash<T: Serialize + ?Sized>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let bytes = serde_json::to_vec(&value)?;
    Ok(hex(&Sha256::digest(bytes)))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct Header {
    tag: String,
    config_hash: String,
    config: serde_json::Value,
    tensors: Vec<(String, usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub tag: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub params: ParameterSet,
}

pub fn save_checkpoint<T: Serialize>(
    path: &Path,
    tag: &str,
    config: &T,
    params: &ParameterSet,
) -> Result<()> {
    let header = Header {
        tag: tag.to_string(),
        config_hash: config_hash(config)?,
        config: serde_json::to_value(config)?,
        tensors: params
            .ids()
            .map(|id| {
                let (r, c) = params.get(id).dim();
                (params.name(id).to_string(), r, c)
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + header.len() + 8 * params.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in params.tensors() {
        for x in t.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Input(format!("{}: {what}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut offset = 12 + len;
    let mut params = ParameterSet::new();
    for (name, r, c) in header.tensors {
        let end = offset + 8 * r * c;
        let raw = bytes.get(offset..end).ok_or_else(|| bad("truncated tensor data"))?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.add(name, Array2::from_shape_vec((r, c), values).expect("shape matches"));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        tag: header.tag,
        config_hash: header.config_hash,
        config: header.config,
        params,
    })
}
