//! Output manifests and JSON-lines logs.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

/// Written into every output directory.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct OutputManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_digest: String,
    /// The resolved configuration, as TOML.
    pub config: String,
    /// Output file name and hex SHA-256 of its contents, sorted by name.
    pub files: Vec<(String, String)>,
    /// Command-specific facts.
    pub details: serde_json::Value,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes every regular file under `dir` (recursively) except the manifest.
fn digest_tree(dir: &Path, prefix: &str, out: &mut Vec<(String, String)>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(Error::io(dir))? {
        let entry = entry.map_err(Error::io(dir))?;
        let name = format!("{prefix}{}", entry.file_name().to_string_lossy());
        let path = entry.path();
        if path.is_dir() {
            digest_tree(&path, &format!("{name}/"), out)?;
        } else if name != MANIFEST_FILE {
            out.push((name, file_digest(&path)?));
        }
    }
    Ok(())
}

pub fn write_manifest(dir: &Path, command: &str, config: &RunConfig, details: serde_json::Value) -> Result<OutputManifest> {
    let mut files = Vec::new();
    digest_tree(dir, "", &mut files)?;
    files.sort();
    let manifest = OutputManifest {
        tool: "posedance".into(),
        version: TOOL_VERSION.into(),
        command: command.into(),
        seed: config.seed,
        config_digest: config.digest(),
        config: config.canonical(),
        files,
        details,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<OutputManifest> {
    read_json(&dir.join(MANIFEST_FILE))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("values serialize");
    std::fs::write(path, text + "\n").map_err(Error::io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.write_all(b"\n").expect("writing to a vector");
    }
    std::fs::write(path, out).map_err(Error::io(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Per-timestep record of an embedding optimization.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub t: usize,
    pub start: f64,
    pub end: f64,
    pub iterations: usize,
}

impl From<&posedance_core::inversion::TimestepLoss> for LossRecord {
    fn from(l: &posedance_core::inversion::TimestepLoss) -> Self {
        LossRecord {
            t: l.t,
            start: l.start,
            end: l.end,
            iterations: l.history.len().saturating_sub(1),
        }
    }
}
