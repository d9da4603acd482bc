//! Run manifests and content hashing of inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// SHA-256 over `blob <len>\0<bytes>`, the object hashing scheme git uses.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub bytes: usize,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> std::io::Result<InputRecord> {
    let bytes = fs::read(path)?;
    Ok(InputRecord {
        path: path.to_path_buf(),
        bytes: bytes.len(),
        sha256: blob_hash(&bytes),
    })
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub seeds: Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
}
