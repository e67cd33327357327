//! Completion backends: the only place model output enters the system.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    NextStepper,
    Modify,
    Designer,
    Summarizer,
}

impl AgentRole {
    pub const ALL: [AgentRole; 4] = [AgentRole::NextStepper, AgentRole::Modify, AgentRole::Designer, AgentRole::Summarizer];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::NextStepper => "next_stepper",
            AgentRole::Modify => "modify",
            AgentRole::Designer => "designer",
            AgentRole::Summarizer => "summarizer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: AgentRole,
    pub system: String,
    pub user: String,
    pub temperature: f64,
}

impl CompletionRequest {
    /// Stable identity of the prompt pair, used by keyed replay scripts.
    pub fn key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.system.as_bytes());
        hasher.update(b"\n");
        hasher.update(self.user.as_bytes());
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    Protocol(String),
    #[error("replay script has no response left for {0}")]
    Exhausted(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

/// A text-completion endpoint. Implementations must be usable from several
/// threads at once; any cursor state they keep is exposed through
/// `snapshot`/`restore` so checkpoints can resume a run exactly.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    fn snapshot(&self) -> Value {
        Value::Null
    }

    fn restore(&self, _state: &Value) -> Result<(), BackendError> {
        Ok(())
    }
}

type ScriptFn = dyn Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync;

/// Deterministic backend backed by a pure function of the request.
#[derive(Clone)]
pub struct ScriptedBackend {
    script: Arc<ScriptFn>,
}

impl ScriptedBackend {
    pub fn new(script: impl Fn(&CompletionRequest) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self { script: Arc::new(script) }
    }
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ScriptedBackend")
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (self.script)(request)
    }
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Responses are served in file order, one cursor per role. Entries
    /// without a role are served to any role.
    #[default]
    Sequential,
    /// Responses are looked up by request key. Repeated keys are served in
    /// file order; once exhausted the last one is repeated.
    Keyed,
}

#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
struct ReplayCursor {
    by_role: BTreeMap<String, usize>,
    by_key: BTreeMap<String, usize>,
}

/// Replays canned responses from a JSON-lines script.
#[derive(Debug)]
pub struct ReplayBackend {
    entries: Vec<ReplayEntry>,
    mode: ReplayMode,
    cursor: Mutex<ReplayCursor>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<ReplayEntry>, mode: ReplayMode) -> Self {
        Self { entries, mode, cursor: Mutex::new(ReplayCursor::default()) }
    }

    pub fn from_jsonl(path: &Path, mode: ReplayMode) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path)
            .map_err(|e| BackendError::Config(format!("cannot open replay file {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| BackendError::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line)
                .map_err(|e| BackendError::Config(format!("replay line {}: {e}", i + 1)))?;
            if mode == ReplayMode::Keyed && entry.key.is_none() {
                return Err(BackendError::Config(format!("replay line {}: keyed replay needs a key", i + 1)));
            }
            entries.push(entry);
        }
        Ok(Self::new(entries, mode))
    }

    fn next_sequential(&self, cursor: &mut ReplayCursor, role: AgentRole) -> Result<String, BackendError> {
        let pos = cursor.by_role.entry(role.as_str().to_string()).or_insert(0);
        let found = self.entries[*pos..]
            .iter()
            .position(|e| e.role.is_none_or(|r| r == role))
            .map(|offset| *pos + offset);
        match found {
            Some(i) => {
                *pos = i + 1;
                Ok(self.entries[i].response.clone())
            }
            None => Err(BackendError::Exhausted(role.as_str().to_string())),
        }
    }

    fn next_keyed(&self, cursor: &mut ReplayCursor, key: &str) -> Result<String, BackendError> {
        let matches: Vec<&ReplayEntry> = self.entries.iter().filter(|e| e.key.as_deref() == Some(key)).collect();
        if matches.is_empty() {
            return Err(BackendError::Exhausted(format!("key {key}")));
        }
        let served = cursor.by_key.entry(key.to_string()).or_insert(0);
        let entry = matches[(*served).min(matches.len() - 1)];
        *served += 1;
        Ok(entry.response.clone())
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().expect("replay cursor lock");
        match self.mode {
            ReplayMode::Sequential => self.next_sequential(&mut cursor, request.role),
            ReplayMode::Keyed => self.next_keyed(&mut cursor, &request.key()),
        }
    }

    fn snapshot(&self) -> Value {
        serde_json::to_value(&*self.cursor.lock().expect("replay cursor lock")).expect("cursor serializes")
    }

    fn restore(&self, state: &Value) -> Result<(), BackendError> {
        if state.is_null() {
            return Ok(());
        }
        let restored: ReplayCursor =
            serde_json::from_value(state.clone()).map_err(|e| BackendError::Config(format!("bad replay cursor: {e}")))?;
        *self.cursor.lock().expect("replay cursor lock") = restored;
        Ok(())
    }
}

/// Passes requests through to another backend and keeps every exchange so it
/// can be written out as a keyed replay file.
pub struct RecordingBackend {
    inner: Arc<dyn CompletionBackend>,
    log: Mutex<Vec<ReplayEntry>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn CompletionBackend>) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn entries(&self) -> Vec<ReplayEntry> {
        self.log.lock().expect("recording lock").clone()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for entry in self.entries() {
            serde_json::to_writer(&mut out, &entry)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

impl CompletionBackend for RecordingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let response = self.inner.complete(request)?;
        self.log.lock().expect("recording lock").push(ReplayEntry {
            key: Some(request.key()),
            role: Some(request.role),
            response: response.clone(),
        });
        Ok(response)
    }

    fn snapshot(&self) -> Value {
        self.inner.snapshot()
    }

    fn restore(&self, state: &Value) -> Result<(), BackendError> {
        self.inner.restore(state)
    }
}

/// Backend assignment per agent role.
#[derive(Clone)]
pub struct AgentBackends {
    roles: BTreeMap<AgentRole, Arc<dyn CompletionBackend>>,
}

impl AgentBackends {
    pub fn uniform(backend: Arc<dyn CompletionBackend>) -> Self {
        Self { roles: AgentRole::ALL.iter().map(|r| (*r, Arc::clone(&backend))).collect() }
    }

    pub fn with_role(mut self, role: AgentRole, backend: Arc<dyn CompletionBackend>) -> Self {
        self.roles.insert(role, backend);
        self
    }

    pub fn get(&self, role: AgentRole) -> &dyn CompletionBackend {
        self.roles[&role].as_ref()
    }

    /// Cursor state of every role's backend, for checkpoints.
    pub fn snapshot(&self) -> Value {
        Value::Object(
            self.roles
                .iter()
                .map(|(role, b)| (role.as_str().to_string(), b.snapshot()))
                .collect(),
        )
    }

    pub fn restore(&self, state: &Value) -> Result<(), BackendError> {
        for (role, backend) in &self.roles {
            if let Some(s) = state.get(role.as_str()) {
                backend.restore(s)?;
            }
        }
        Ok(())
    }
}
