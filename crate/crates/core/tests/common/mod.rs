//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use phylo_core::orchestrator::{build_runtime, Orchestrator, Paths, RunConfig, Runtime};

pub fn harness() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_phylo-harness"))
}

pub fn paths(dir: &Path) -> Paths {
    Paths { base_dir: dir.to_path_buf(), output_dir: dir.to_path_buf(), default_harness: Some((harness(), Vec::new())) }
}

/// Hill-climber run on a built-in task with optional extra top-level fields.
pub fn config(task: &str, seed: u64, epochs: u64, extra: &str) -> RunConfig {
    let extra = if extra.is_empty() { String::new() } else { format!(", {extra}") };
    let text = format!(
        r#"{{"seed": {seed}, "epochs": {epochs}, "task": "{task}", "seeds": [{{"label": "s0"}}],
            "backends": {{"default": {{"kind": "hill_climber"}}}}{extra}}}"#
    );
    RunConfig::from_json(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

pub fn runtime(config: &RunConfig, dir: &Path) -> Runtime {
    build_runtime(config, &paths(dir)).expect("runtime builds")
}

pub fn orchestrator(config: &RunConfig, dir: &Path, output: bool) -> Orchestrator {
    let out = output.then(|| dir.to_path_buf());
    Orchestrator::new(config.clone(), runtime(config, dir), out).expect("seeding succeeds")
}
