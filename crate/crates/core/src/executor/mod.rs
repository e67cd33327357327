//! Sandboxed candidate evaluation.
//!
//! Harness protocol: the harness is invoked as `harness <artifact> <data dir>`
//! inside a fresh scratch directory. A run succeeds when it exits 0 and its
//! last non-empty stdout line is `SCORE <decimal>`. Anything else is a failure
//! with a reason. `PHYLO_EVAL_MODE` is set to `full` or `dry-run`; in dry-run
//! mode exit status 0 alone means the artifact is well formed.

mod container;
mod process;
mod task;

use std::ffi::OsString;
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use container::ContainerConfig;
pub use task::{Constraint, TaskRegistry, TaskSpec};

use process::{looks_like_oom, RunSpec, Termination};

pub const MODE_ENV: &str = "PHYLO_EVAL_MODE";
/// Upper bound on captured output per stream.
pub const LOG_CAP_BYTES: usize = 64 * 1024;
const REASON_LOG_TAIL: usize = 512;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("sandbox setup failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalLimits {
    pub wall_clock_s: f64,
    pub memory_bytes: u64,
}

impl Default for EvalLimits {
    fn default() -> Self {
        Self { wall_clock_s: 10.0, memory_bytes: 512 * 1024 * 1024 }
    }
}

impl EvalLimits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.wall_clock_s > 0.0 && self.wall_clock_s.is_finite()) {
            return Err("wall_clock_s must be positive".into());
        }
        if self.memory_bytes == 0 {
            return Err("memory_bytes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Well-formedness probe only.
    DryRun,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    pub code: String,
    pub task_ref: String,
    pub limits: EvalLimits,
    pub mode: EvalMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EvalOutcome {
    Success { score: f64 },
    Failure { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub outcome: EvalOutcome,
    pub runtime_ms: f64,
    pub constraint_ok: bool,
    /// Tail of the harness output, bounded by [`LOG_CAP_BYTES`].
    pub logs: String,
}

impl EvalResult {
    pub fn success(score: f64, runtime_ms: f64) -> Self {
        Self {
            outcome: EvalOutcome::Success { score },
            runtime_ms,
            constraint_ok: true,
            logs: String::new(),
        }
    }

    pub fn failure(reason: impl Into<String>, runtime_ms: f64) -> Self {
        Self {
            outcome: EvalOutcome::Failure { reason: reason.into() },
            runtime_ms,
            constraint_ok: true,
            logs: String::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self.outcome, EvalOutcome::Success { .. })
    }

    pub fn score(&self) -> Option<f64> {
        match self.outcome {
            EvalOutcome::Success { score } => Some(score),
            EvalOutcome::Failure { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match &self.outcome {
            EvalOutcome::Success { .. } => None,
            EvalOutcome::Failure { reason } => Some(reason),
        }
    }
}

/// Which reading of "reward > 0" admits a child into the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementGate {
    /// Strict improvement over the parent.
    #[default]
    DeltaPositive,
    /// Positive absolute reward.
    AbsolutePositive,
}

impl ImprovementGate {
    pub fn admits(self, reward: f64, delta_reward: f64) -> bool {
        match self {
            ImprovementGate::DeltaPositive => delta_reward > 0.0,
            ImprovementGate::AbsolutePositive => reward > 0.0,
        }
    }
}

/// `(reward, delta)` for a result. Failures take the sentinel reward; their
/// delta is informational only.
pub fn reward_from(result: &EvalResult, parent_reward: f64, failure_sentinel: f64) -> (f64, f64) {
    let reward = result.score().unwrap_or(failure_sentinel);
    (reward, reward - parent_reward)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SandboxBackend {
    #[default]
    Process,
    Container(ContainerConfig),
}

fn score_line() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^SCORE (-?[0-9]+(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?)$").expect("valid regex"))
}

/// Parses the result channel: the final non-empty stdout line.
pub fn parse_score(stdout: &str) -> Option<f64> {
    let last = stdout.lines().rev().find(|l| !l.trim().is_empty())?;
    let caps = score_line().captures(last.trim_end())?;
    caps[1].parse::<f64>().ok().filter(|s| s.is_finite())
}

fn tail(text: &str, max: usize) -> &str {
    if text.len() <= max {
        return text;
    }
    let mut start = text.len() - max;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    &text[start..]
}

#[derive(Debug, Clone)]
pub struct Executor {
    registry: TaskRegistry,
    backend: SandboxBackend,
    workers: usize,
}

impl Executor {
    pub fn new(registry: TaskRegistry) -> Self {
        Self { registry, backend: SandboxBackend::Process, workers: 1 }
    }

    pub fn with_backend(mut self, backend: SandboxBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn registry(&self) -> &TaskRegistry {
        &self.registry
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec, ExecError> {
        self.registry.get(id)
    }

    /// Runs one request. Errors are reserved for precondition violations;
    /// everything the candidate does wrong comes back as a failed result.
    pub fn evaluate(&self, request: &EvalRequest) -> Result<EvalResult, ExecError> {
        let task = self.registry.get(&request.task_ref)?;
        request.limits.validate().map_err(ExecError::InvalidLimits)?;

        if let Err(why) = task.check_static(&request.code) {
            let mut result = EvalResult::failure(format!("constraint violated: {why}"), 0.0);
            result.constraint_ok = false;
            return Ok(result);
        }

        let scratch = tempfile::Builder::new().prefix("phylo-eval-").tempdir()?;
        let artifact = scratch.path().join(&task.artifact_name);
        std::fs::write(&artifact, &request.code)?;
        let mode_value = match request.mode {
            EvalMode::DryRun => "dry-run",
            EvalMode::Full => "full",
        };
        let mut env = vec![(MODE_ENV.to_string(), mode_value.to_string())];
        if let Ok(path) = std::env::var("PATH") {
            env.push(("PATH".to_string(), path));
        }
        let wall_clock = Duration::from_secs_f64(request.limits.wall_clock_s);
        let spec = match &self.backend {
            SandboxBackend::Process => RunSpec {
                program: task.harness.clone(),
                args: task
                    .harness_args
                    .iter()
                    .map(OsString::from)
                    .chain([artifact.clone().into_os_string(), task.data_dir.clone().into_os_string()])
                    .collect(),
                cwd: scratch.path().to_path_buf(),
                env,
                wall_clock,
                memory_bytes: request.limits.memory_bytes,
                limit_address_space: true,
                log_cap: LOG_CAP_BYTES,
            },
            SandboxBackend::Container(cfg) => RunSpec {
                program: cfg.runtime.clone(),
                args: cfg.run_args(
                    scratch.path(),
                    &task.data_dir,
                    &task.artifact_name,
                    request.limits.memory_bytes,
                    &format!("{MODE_ENV}={mode_value}"),
                    |k| std::env::var(k).ok(),
                ),
                cwd: scratch.path().to_path_buf(),
                env,
                wall_clock,
                // the container enforces memory; the client itself stays small
                memory_bytes: u64::MAX,
                limit_address_space: false,
                log_cap: LOG_CAP_BYTES,
            },
        };

        let output = match process::run(&spec) {
            Ok(output) => output,
            Err(e) => return Ok(EvalResult::failure(format!("failed to launch harness: {e}"), 0.0)),
        };
        let logs = {
            let mut logs = String::from(tail(&output.stderr, LOG_CAP_BYTES / 2));
            logs.push_str(tail(&output.stdout, LOG_CAP_BYTES / 2));
            logs
        };
        let mut result = match output.termination {
            Termination::TimedOut => {
                EvalResult::failure(format!("timeout after {}s", request.limits.wall_clock_s), output.runtime_ms)
            }
            Termination::MemoryKilled => EvalResult::failure("memory limit", output.runtime_ms),
            Termination::Exited(status) if !status.success() => {
                if looks_like_oom(&status, &output.stderr) {
                    EvalResult::failure("memory limit", output.runtime_ms)
                } else {
                    let code = status
                        .code()
                        .map(|c| format!("exit code {c}"))
                        .unwrap_or_else(|| format!("terminated by {status}"));
                    let trailing = tail(output.stderr.trim_end(), REASON_LOG_TAIL);
                    EvalResult::failure(format!("{code}: {trailing}"), output.runtime_ms)
                }
            }
            Termination::Exited(_) => match request.mode {
                EvalMode::DryRun => EvalResult::success(0.0, output.runtime_ms),
                EvalMode::Full => match parse_score(&output.stdout) {
                    Some(score) => EvalResult::success(score, output.runtime_ms),
                    None => EvalResult::failure("malformed result", output.runtime_ms),
                },
            },
        };
        result.logs = logs;
        if result.is_success() && request.mode == EvalMode::Full {
            if let Err(why) = task.check_run(result.runtime_ms) {
                result.outcome = EvalOutcome::Failure { reason: format!("constraint violated: {why}") };
                result.constraint_ok = false;
            }
        }
        Ok(result)
    }

    /// Evaluates independent requests on up to `workers` threads. Results are
    /// returned in the order of their request ids.
    pub fn evaluate_batch(&self, requests: Vec<(u64, EvalRequest)>) -> Vec<(u64, Result<EvalResult, ExecError>)> {
        let queue = Mutex::new(requests.into_iter());
        let results = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..self.workers {
                scope.spawn(|| loop {
                    let next = queue.lock().expect("queue lock").next();
                    let Some((id, request)) = next else { break };
                    let result = self.evaluate(&request);
                    results.lock().expect("results lock").push((id, result));
                });
            }
        });
        let mut results = results.into_inner().expect("results lock");
        results.sort_by_key(|(id, _)| *id);
        results
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_line_parsing() {
        assert_eq!(parse_score("warming up\nSCORE 1.5\n"), Some(1.5));
        assert_eq!(parse_score("SCORE -2\n\n"), Some(-2.0));
        assert_eq!(parse_score("SCORE 1e-3"), Some(0.001));
        assert_eq!(parse_score("SCORE 1.5\ntrailing chatter\n"), None);
        assert_eq!(parse_score("SCORE abc"), None);
        assert_eq!(parse_score("score 1"), None);
        assert_eq!(parse_score(""), None);
    }

    #[test]
    fn reward_conventions() {
        assert_eq!(reward_from(&EvalResult::success(1.5, 0.0), 1.0, -1e18), (1.5, 0.5));
        let (r, d) = reward_from(&EvalResult::success(1.0, 0.0), 1.0, -1e18);
        assert_eq!(d, 0.0);
        assert!(!ImprovementGate::DeltaPositive.admits(r, d));
        assert!(ImprovementGate::AbsolutePositive.admits(r, d));
        let (r, _) = reward_from(&EvalResult::failure("x", 0.0), 1.0, -1e18);
        assert_eq!(r, -1e18);
    }

    #[test]
    fn unknown_task_is_a_precondition_error() {
        let exec = Executor::new(TaskRegistry::new());
        let req = EvalRequest {
            code: String::new(),
            task_ref: "nope".into(),
            limits: EvalLimits::default(),
            mode: EvalMode::Full,
        };
        assert!(matches!(exec.evaluate(&req), Err(ExecError::UnknownTask(_))));
    }

    #[test]
    fn tail_respects_char_boundaries() {
        assert_eq!(tail("héllo", 4), "llo");
        assert_eq!(tail("abc", 10), "abc");
    }
}
