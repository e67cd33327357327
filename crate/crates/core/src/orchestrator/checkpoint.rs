//! Checksummed, versioned checkpoints written atomically.
//!
//! Layout: `{"header": {...}, "body": {...}}`. The checksum is SHA-256 over
//! the header's other fields and the exact body bytes, so any edit to either
//! is detected on load.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::RunConfig;
use super::state::RunState;
use crate::forest::{to_sexpr, TreeId};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint is malformed: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub config_hash: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBody {
    pub config: RunConfig,
    pub state: RunState,
    /// Backend cursors, for backends that have any.
    pub backends: Value,
    /// Full S-expression of every tree, tombstones included.
    pub sexpr: BTreeMap<TreeId, String>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    header: CheckpointHeader,
    body: Box<RawValue>,
}

fn checksum(format_version: u32, created_at: u64, config_hash: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{format_version}\n{created_at}\n{config_hash}\n").as_bytes());
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

impl CheckpointBody {
    pub fn new(config: RunConfig, state: RunState, backends: Value) -> Self {
        let sexpr = state.forest.trees.values().map(|t| (t.id, to_sexpr(t, true))).collect();
        Self { config, state, backends, sexpr }
    }
}

pub fn encode(body: &CheckpointBody) -> String {
    let raw = serde_json::to_string(body).expect("checkpoint body serializes");
    let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let config_hash = body.config.hash();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        created_at,
        checksum: checksum(CHECKPOINT_FORMAT_VERSION, created_at, &config_hash, &raw),
        config_hash,
    };
    let envelope = Envelope { header, body: RawValue::from_string(raw).expect("body is valid JSON") };
    serde_json::to_string(&envelope).expect("checkpoint serializes")
}

pub fn decode(text: &str) -> Result<CheckpointBody, CheckpointError> {
    let envelope: Envelope = serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    let h = &envelope.header;
    if h.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Version { found: h.format_version, expected: CHECKPOINT_FORMAT_VERSION });
    }
    let raw = envelope.body.get();
    if checksum(h.format_version, h.created_at, &h.config_hash, raw) != h.checksum {
        return Err(CheckpointError::Integrity("checksum mismatch".into()));
    }
    let body: CheckpointBody = serde_json::from_str(raw).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if body.config.hash() != h.config_hash {
        return Err(CheckpointError::Integrity("config hash mismatch".into()));
    }
    body.config.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;
    for tree in body.state.forest.trees.values() {
        tree.validate().map_err(|e| CheckpointError::Integrity(format!("tree {}: {e}", tree.id)))?;
        if body.sexpr.get(&tree.id) != Some(&to_sexpr(tree, true)) {
            return Err(CheckpointError::Integrity(format!("tree {} does not match its S-expression", tree.id)));
        }
    }
    if body.sexpr.len() != body.state.forest.len() {
        return Err(CheckpointError::Integrity("S-expression set does not match the forest".into()));
    }
    Ok(body)
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write(path: &Path, body: &CheckpointBody) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    write_atomic(path, encode(body).as_bytes()).map_err(io)
}

pub fn read(path: &Path) -> Result<CheckpointBody, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode(&text)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
