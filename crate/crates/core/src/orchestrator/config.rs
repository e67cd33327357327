//! Versioned JSON run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{AgentRole, ContextLimits, HttpConfig, ModeThresholds, ReplayMode, DEFAULT_DEBUG_RETRIES, DEFAULT_REASKS, DEFAULT_SUMMARY_CAP};
use crate::elite_pool::DEFAULT_ELITE_K;
use crate::executor::{EvalLimits, ImprovementGate, SandboxBackend, TaskSpec};
use crate::forest::DEFAULT_FAILURE_SENTINEL;
use crate::pruning::{LowPotentialParams, RetentionWeights};
use crate::sampling::{SamplingParams, TreeScoreWeights};
use crate::testbed::{ClimberConfig, FailurePlan};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config is not valid: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub label: String,
    /// Inline artifact. Built-in tasks fall back to their default seed.
    #[serde(default)]
    pub code: Option<String>,
    /// Artifact file, relative to the config file.
    #[serde(default)]
    pub code_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Scripted parameter climber for the built-in tasks.
    HillClimber {
        #[serde(default)]
        climber: ClimberConfig,
        #[serde(default)]
        failures: Option<FailurePlan>,
    },
    /// JSON-lines replay file, relative to the config file.
    Replay {
        path: PathBuf,
        #[serde(default)]
        mode: ReplayMode,
    },
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub default: BackendSpec,
    /// Per-role overrides.
    #[serde(default)]
    pub roles: BTreeMap<AgentRole, BackendSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentParams {
    pub temperature: f64,
    pub reasks: u32,
    pub debug_retries: u32,
    pub context: ContextLimits,
    /// Elite trajectories from other lineages shown to the designer.
    pub designer_exemplars: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            reasks: DEFAULT_REASKS,
            debug_retries: DEFAULT_DEBUG_RETRIES,
            context: ContextLimits::default(),
            designer_exemplars: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroParams {
    /// Epochs without a new best before a redesign is considered.
    pub plateau: u64,
    /// Mean forest diversity below which a redesign is considered.
    pub diversity: f64,
    /// Minimum epochs between redesigns.
    pub cooldown: u64,
    pub summarize_interval: u64,
}

impl Default for MacroParams {
    fn default() -> Self {
        Self { plateau: 15, diversity: 0.15, cooldown: 20, summarize_interval: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    pub workers: usize,
    pub sandbox: SandboxBackend,
    /// Harness for built-in tasks. Defaults to `phylo-harness` next to the
    /// running executable.
    pub harness: Option<PathBuf>,
    /// Arguments placed before the artifact and data paths.
    pub harness_args: Vec<String>,
    /// Where built-in task data is written. Defaults to `<output>/tasks`.
    pub data_dir: Option<PathBuf>,
    /// Additional tasks with their own harnesses.
    pub tasks: Vec<TaskSpec>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self { workers: 1, sandbox: SandboxBackend::Process, harness: None, harness_args: Vec::new(), data_dir: None, tasks: Vec::new() }
    }
}

fn default_version() -> u32 {
    CONFIG_FORMAT_VERSION
}
fn default_capacity() -> usize {
    8
}
fn default_elite_k() -> usize {
    DEFAULT_ELITE_K
}
fn default_summary_cap() -> usize {
    DEFAULT_SUMMARY_CAP
}
fn default_checkpoint_interval() -> u64 {
    5
}
fn default_horizon() -> u64 {
    20
}
fn default_islands() -> usize {
    1
}
fn default_sentinel() -> f64 {
    DEFAULT_FAILURE_SENTINEL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub format_version: u32,
    /// Random seed. Required: runs are reproducible by contract.
    pub seed: u64,
    pub epochs: u64,
    pub task: String,
    pub seeds: Vec<SeedSpec>,
    pub backends: BackendsConfig,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub tree_score: TreeScoreWeights,
    #[serde(default)]
    pub retention: RetentionWeights,
    #[serde(default = "default_capacity")]
    pub forest_capacity: usize,
    #[serde(default = "default_elite_k")]
    pub elite_k: usize,
    #[serde(default = "default_summary_cap")]
    pub summary_cap: usize,
    #[serde(default)]
    pub low_potential: LowPotentialParams,
    #[serde(default)]
    pub modes: ModeThresholds,
    #[serde(default, rename = "macro")]
    pub macro_loop: MacroParams,
    #[serde(default)]
    pub limits: EvalLimits,
    #[serde(default)]
    pub executor: ExecutorConfig,
    #[serde(default)]
    pub agents: AgentParams,
    #[serde(default)]
    pub gate: ImprovementGate,
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    /// Epochs a tombstone is kept before checkpoints compact it away.
    #[serde(default = "default_horizon")]
    pub tombstone_horizon: u64,
    /// Trees expanded concurrently per epoch.
    #[serde(default = "default_islands")]
    pub islands: usize,
    #[serde(default = "default_sentinel")]
    pub failure_sentinel: f64,
}

fn check(field: &str, result: Result<(), String>) -> Result<(), ConfigError> {
    result.map_err(|m| ConfigError::invalid(field, m))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes()))
    }

    /// Makes every relative path absolute against `base`, so the config
    /// stays usable when stored in a checkpoint elsewhere.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(h) = self.executor.harness.as_mut() {
            fix(h);
        }
        if let Some(d) = self.executor.data_dir.as_mut() {
            fix(d);
        }
        for t in &mut self.executor.tasks {
            fix(&mut t.harness);
            fix(&mut t.data_dir);
        }
        for s in &mut self.seeds {
            if let Some(f) = s.code_file.as_mut() {
                fix(f);
            }
        }
        for spec in std::iter::once(&mut self.backends.default).chain(self.backends.roles.values_mut()) {
            if let BackendSpec::Replay { path, .. } = spec {
                fix(path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(ConfigError::invalid(
                "format_version",
                format!("unsupported version {}, expected {CONFIG_FORMAT_VERSION}", self.format_version),
            ));
        }
        if self.task.trim().is_empty() {
            return Err(ConfigError::invalid("task", "must name a task"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "at least one seed is required"));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if s.label.trim().is_empty() {
                return Err(ConfigError::invalid(&format!("seeds[{i}].label"), "must not be empty"));
            }
            if s.code.is_some() && s.code_file.is_some() {
                return Err(ConfigError::invalid(&format!("seeds[{i}]"), "give code or code_file, not both"));
            }
            if self.seeds[..i].iter().any(|o| o.label == s.label) {
                return Err(ConfigError::invalid(&format!("seeds[{i}].label"), "duplicate label"));
            }
        }
        check("sampling", self.sampling.validate())?;
        check("tree_score", self.tree_score.validate())?;
        check("retention", self.retention.validate())?;
        check("low_potential", self.low_potential.validate())?;
        check("modes", self.modes.validate())?;
        check("limits", self.limits.validate())?;
        if self.forest_capacity == 0 {
            return Err(ConfigError::invalid("forest_capacity", "must be at least 1"));
        }
        if self.seeds.len() > self.forest_capacity {
            return Err(ConfigError::invalid("seeds", "more seeds than forest_capacity"));
        }
        if self.elite_k == 0 {
            return Err(ConfigError::invalid("elite_k", "must be at least 1"));
        }
        if self.summary_cap == 0 {
            return Err(ConfigError::invalid("summary_cap", "must be at least 1"));
        }
        if self.checkpoint_interval == 0 {
            return Err(ConfigError::invalid("checkpoint_interval", "must be at least 1"));
        }
        if self.islands == 0 {
            return Err(ConfigError::invalid("islands", "must be at least 1"));
        }
        if self.executor.workers == 0 {
            return Err(ConfigError::invalid("executor.workers", "must be at least 1"));
        }
        if self.macro_loop.summarize_interval == 0 {
            return Err(ConfigError::invalid("macro.summarize_interval", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.macro_loop.diversity) {
            return Err(ConfigError::invalid("macro.diversity", "must lie in [0, 1]"));
        }
        if !(self.agents.temperature >= 0.0 && self.agents.temperature.is_finite()) {
            return Err(ConfigError::invalid("agents.temperature", "must be non-negative"));
        }
        if self.agents.context.max_tokens == 0 {
            return Err(ConfigError::invalid("agents.context.max_tokens", "must be positive"));
        }
        if !(self.failure_sentinel.is_finite() && self.failure_sentinel < 0.0) {
            return Err(ConfigError::invalid("failure_sentinel", "must be a finite negative number"));
        }
        let backends = std::iter::once(("backends.default".to_string(), &self.backends.default))
            .chain(self.backends.roles.iter().map(|(r, b)| (format!("backends.roles.{}", r.as_str()), b)));
        for (field, spec) in backends {
            if let BackendSpec::Http(http) = spec {
                check(&field, http.validate())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 7,
        "epochs": 3,
        "task": "quadratic-1d",
        "seeds": [{"label": "a"}],
        "backends": {"default": {"kind": "hill_climber"}}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.format_version, CONFIG_FORMAT_VERSION);
        assert_eq!(c.modes.warmup_epochs, 10);
        assert_eq!(c.macro_loop.plateau, 15);
        assert_eq!(c.islands, 1);
        assert_eq!(c.gate, ImprovementGate::DeltaPositive);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn missing_seed_names_the_field() {
        let text = MINIMAL.replace("\"seed\": 7,", "");
        let err = RunConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("`seed`"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let text = MINIMAL.replace("\"epochs\": 3,", "\"epochs\": 3, \"sampling\": {\"alpha\": 1, \"beta\": 1, \"gamma\": 1, \"temperature\": 0},");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { field, .. } if field == "sampling"), "{err}");
        let text = MINIMAL.replace("\"epochs\": 3,", "\"epochs\": 3, \"islands\": 0,");
        assert!(RunConfig::from_json(&text).unwrap_err().to_string().contains("`islands`"));
        let text = MINIMAL.replace("\"epochs\": 3,", "\"epochs\": 3, \"bogus\": 1,");
        assert!(RunConfig::from_json(&text).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let text = MINIMAL.replace(r#"{"label": "a"}"#, r#"{"label": "a", "code_file": "seed.prog"}"#);
        let mut c = RunConfig::from_json(&text).unwrap();
        c.executor.harness = Some("/abs/harness".into());
        c.resolve_paths(Path::new("/base"));
        assert_eq!(c.seeds[0].code_file.as_deref(), Some(Path::new("/base/seed.prog")));
        assert_eq!(c.executor.harness.as_deref(), Some(Path::new("/abs/harness")));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }
}
