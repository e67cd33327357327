//! Builds the executor, agent backends and seed artifacts a config asks for.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::{BackendSpec, ConfigError, RunConfig};
use crate::agents::{AgentBackends, CompletionBackend, HttpBackend, ReplayBackend};
use crate::executor::{Executor, TaskRegistry};
use crate::testbed::{self, HillClimber};

/// Where relative paths resolve and where generated files go.
#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    /// Directory of the config file.
    pub base_dir: PathBuf,
    /// Run output directory.
    pub output_dir: PathBuf,
    /// Harness program and leading arguments used when the config does not
    /// name one.
    pub default_harness: Option<(PathBuf, Vec<String>)>,
}

pub struct Runtime {
    pub executor: Executor,
    pub backends: AgentBackends,
    /// `(label, artifact)` per configured seed.
    pub seeds: Vec<(String, String)>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn backend(spec: &BackendSpec, config: &RunConfig, field: &str, base: &Path) -> Result<Arc<dyn CompletionBackend>, ConfigError> {
    let invalid = |message: String| ConfigError::Invalid { field: field.to_string(), message };
    Ok(match spec {
        BackendSpec::HillClimber { climber, failures } => {
            let task = testbed::builtin_task(&config.task)
                .ok_or_else(|| invalid(format!("hill_climber only drives built-in tasks, not {:?}", config.task)))?;
            let mut hc = HillClimber::new(task, *climber);
            if let Some(plan) = failures {
                hc = hc.with_failures(plan.clone());
            }
            Arc::new(hc)
        }
        BackendSpec::Replay { path, mode } => {
            Arc::new(ReplayBackend::from_jsonl(&resolve(base, path), *mode).map_err(|e| invalid(e.to_string()))?)
        }
        BackendSpec::Http(http) => Arc::new(HttpBackend::new(http.clone()).map_err(|e| invalid(e.to_string()))?),
    })
}

pub fn build_runtime(config: &RunConfig, paths: &Paths) -> Result<Runtime, ConfigError> {
    let invalid = |field: &str, message: String| ConfigError::Invalid { field: field.to_string(), message };
    let base = &paths.base_dir;

    let builtin = testbed::builtin_task(&config.task).is_some();
    let harness = match &config.executor.harness {
        Some(h) => Some((resolve(base, h), config.executor.harness_args.clone())),
        None => paths.default_harness.clone(),
    };
    let mut registry = TaskRegistry::new();
    if let Some((harness, harness_args)) = &harness {
        let data_root = config
            .executor
            .data_dir
            .as_deref()
            .map(|d| resolve(base, d))
            .unwrap_or_else(|| paths.output_dir.join("tasks"));
        registry = testbed::install(&testbed::builtin_tasks(), harness, harness_args, &data_root)
            .map_err(|e| invalid("executor.data_dir", format!("cannot write task data: {e}")))?;
    } else if builtin {
        return Err(invalid("executor.harness", "no harness configured for the built-in tasks".into()));
    }
    for spec in &config.executor.tasks {
        let mut spec = spec.clone();
        spec.harness = resolve(base, &spec.harness);
        spec.data_dir = resolve(base, &spec.data_dir);
        registry.register(spec);
    }
    if registry.get(&config.task).is_err() {
        return Err(invalid("task", format!("unknown task {:?}", config.task)));
    }
    let executor = Executor::new(registry)
        .with_backend(config.executor.sandbox.clone())
        .with_workers(config.executor.workers);

    let mut backends = AgentBackends::uniform(backend(&config.backends.default, config, "backends.default", base)?);
    for (role, spec) in &config.backends.roles {
        let field = format!("backends.roles.{}", role.as_str());
        backends = backends.with_role(*role, backend(spec, config, &field, base)?);
    }

    let mut seeds = Vec::new();
    for (i, s) in config.seeds.iter().enumerate() {
        let code = match (&s.code, &s.code_file) {
            (Some(code), _) => code.clone(),
            (None, Some(file)) => std::fs::read_to_string(resolve(base, file))
                .map_err(|e| invalid(&format!("seeds[{i}].code_file"), e.to_string()))?,
            (None, None) => testbed::builtin_task(&config.task)
                .map(|t| t.seed_code())
                .ok_or_else(|| invalid(&format!("seeds[{i}]"), "custom tasks need code or code_file".into()))?,
        };
        seeds.push((s.label.clone(), code));
    }
    Ok(Runtime { executor, backends, seeds })
}
