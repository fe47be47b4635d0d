//! JSON-lines manifests: a header carrying the resolved config and input
//! hashes, then one line per produced item.

use std::fs;
use std::path::Path;

use pocketdiff::pipeline::RunConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub command: String,
    pub config: RunConfig,
    /// `(label, sha256)` of every input file, in a fixed order.
    pub inputs: Vec<(String, String)>,
}

impl Header {
    pub fn new(command: &str, config: &RunConfig, inputs: Vec<(String, String)>) -> Self {
        Header { kind: "header".into(), command: command.into(), config: config.clone(), inputs }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| CliError::io(path, e))?))
}

/// Serialises the header and `rows`, one JSON document per line.
pub fn write<T: Serialize>(path: &Path, header: &Header, rows: &[T]) -> CliResult<()> {
    let mut out = serde_json::to_string(header).map_err(|e| CliError::Internal(e.to_string()))?;
    out.push('\n');
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| CliError::Internal(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// The header line and the remaining raw lines.
pub fn read(path: &Path) -> CliResult<(Header, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| CliError::Data(format!("{}: empty manifest", path.display())))?;
    let header: Header = serde_json::from_str(first).map_err(|e| CliError::Data(format!("{}: bad manifest header: {e}", path.display())))?;
    Ok((header, lines.map(str::to_string).collect()))
}
