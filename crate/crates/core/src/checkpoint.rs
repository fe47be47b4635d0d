//! Binary checkpoint format.
//!
//! ```text
//! b"PDCKPT" | u8 version | u64 LE header length | JSON header | f64 LE values
//! ```
//!
//! The header carries the network config, the block layout, both hashes and
//! free-form metadata (training config, schedule, vocabulary).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{BlockSpec, NetConfig, ParameterSet};

const MAGIC: &[u8; 6] = b"PDCKPT";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: NetConfig,
    pub layout: Vec<BlockSpec>,
    pub layout_hash: String,
    pub content_hash: String,
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetConfig,
    pub params: ParameterSet,
    pub meta: serde_json::Value,
}

pub fn encode(config: &NetConfig, params: &ParameterSet, meta: &serde_json::Value) -> Result<Vec<u8>> {
    if !params.matches(config) {
        return Err(Error::Checkpoint("parameter layout does not match the network config".into()));
    }
    let header = Header {
        config: config.clone(),
        layout: params.layout.clone(),
        layout_hash: params.layout_hash(),
        content_hash: params.content_hash(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(15 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 15 || &bytes[..6] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    if bytes[6] != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", bytes[6])));
    }
    let hlen = u64::from_le_bytes(bytes[7..15].try_into().unwrap()) as usize;
    let body = bytes.get(15..15usize.checked_add(hlen).ok_or_else(|| bad("header length overflow"))?).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    header.config.validate()?;
    let layout = header.config.layout();
    if layout != header.layout {
        return Err(bad("stored layout disagrees with the stored config"));
    }
    let raw = &bytes[15 + hlen..];
    let n: usize = layout.iter().map(|b| b.rows * b.cols).sum();
    if raw.len() != 8 * n {
        return Err(Error::Checkpoint(format!("expected {n} parameters, found {} bytes", raw.len())));
    }
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let params = ParameterSet { layout, values };
    if params.layout_hash() != header.layout_hash {
        return Err(bad("layout hash mismatch"));
    }
    if params.content_hash() != header.content_hash {
        return Err(bad("content hash mismatch (corrupted parameters)"));
    }
    Ok(Checkpoint { config: header.config, params, meta: header.meta })
}

pub fn save(path: &Path, config: &NetConfig, params: &ParameterSet, meta: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(config, params, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
