//! Deterministic synthetic tasks with closed-form scores, their harness, and
//! scripted agent behaviors, so the whole loop runs without a model or GPU.

mod harness;
mod hill_climber;
mod program;

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::executor::{Constraint, TaskRegistry, TaskSpec};

pub use harness::{harness_main, TASK_FILE};
pub use hill_climber::{ClimberConfig, FailureKind, FailurePlan, HillClimber};
pub use program::{Directive, Program};

pub const QUADRATIC_1D: &str = "quadratic-1d";
pub const BIMODAL_2D: &str = "bimodal-2d";
pub const TOKEN_OVERLAP: &str = "token-overlap";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPeak {
    pub center: [f64; 2],
    pub height: f64,
    pub sd: f64,
}

impl GaussianPeak {
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - self.center[0]).powi(2) + (y - self.center[1]).powi(2);
        self.height * (-d2 / (2.0 * self.sd * self.sd)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// `peak - (x - center)^2`
    Quadratic { center: f64, peak: f64 },
    /// Highest of several isotropic Gaussian bumps over `(x, y)`.
    Bimodal { peaks: Vec<GaussianPeak> },
    /// Multiset overlap between the artifact's words and a hidden target.
    /// Parameters are indices into `vocabulary`, one per word slot.
    TokenOverlap { target: String, vocabulary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: String,
    pub description: String,
    pub kind: TaskKind,
    pub optimum: f64,
    pub optimum_params: Vec<f64>,
    pub seed_params: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

pub fn token_overlap(words: &str, target: &str) -> usize {
    let mut remaining: Vec<&str> = target.split_whitespace().collect();
    let mut hits = 0;
    for w in words.split_whitespace() {
        if let Some(pos) = remaining.iter().position(|t| *t == w) {
            remaining.swap_remove(pos);
            hits += 1;
        }
    }
    hits
}

impl SyntheticTask {
    pub fn param_names(&self) -> Vec<String> {
        match &self.kind {
            TaskKind::Quadratic { .. } => vec!["x".into()],
            TaskKind::Bimodal { .. } => vec!["x".into(), "y".into()],
            TaskKind::TokenOverlap { target, .. } => {
                (0..target.split_whitespace().count()).map(|i| format!("w{i}")).collect()
            }
        }
    }

    /// Index of the nearest vocabulary entry; parameters are continuous in the
    /// encoder's domain but words are discrete.
    fn word(vocabulary: &[String], p: f64) -> &str {
        let i = p.round().clamp(0.0, (vocabulary.len() - 1) as f64) as usize;
        &vocabulary[i]
    }

    pub fn score(&self, params: &[f64]) -> f64 {
        match &self.kind {
            TaskKind::Quadratic { center, peak } => peak - (params[0] - center).powi(2),
            TaskKind::Bimodal { peaks } => peaks
                .iter()
                .map(|p| p.at(params[0], params[1]))
                .fold(f64::NEG_INFINITY, f64::max),
            TaskKind::TokenOverlap { target, vocabulary } => {
                let words: Vec<&str> = params.iter().map(|p| Self::word(vocabulary, *p)).collect();
                token_overlap(&words.join(" "), target) as f64
            }
        }
    }

    pub fn encode(&self, params: &[f64]) -> String {
        let mut program = Program { task: self.id.clone(), ..Default::default() };
        match &self.kind {
            TaskKind::TokenOverlap { vocabulary, .. } => {
                let words: Vec<&str> = params.iter().map(|p| Self::word(vocabulary, *p)).collect();
                program.text = Some(words.join(" "));
            }
            _ => program.params = self.param_names().into_iter().zip(params.iter().copied()).collect(),
        }
        program.render()
    }

    pub fn decode(&self, code: &str) -> Result<Vec<f64>, String> {
        self.decode_program(&Program::parse(code)?)
    }

    pub fn decode_program(&self, program: &Program) -> Result<Vec<f64>, String> {
        if program.task != self.id {
            return Err(format!("artifact is for task {:?}, expected {:?}", program.task, self.id));
        }
        match &self.kind {
            TaskKind::TokenOverlap { vocabulary, target } => {
                let text = program.text.as_deref().ok_or("missing text line")?;
                let words: Vec<&str> = text.split_whitespace().collect();
                let slots = target.split_whitespace().count();
                if words.len() != slots {
                    return Err(format!("text has {} words, expected {slots}", words.len()));
                }
                words
                    .iter()
                    .map(|w| {
                        vocabulary
                            .iter()
                            .position(|v| v == w)
                            .map(|i| i as f64)
                            .ok_or_else(|| format!("word {w:?} is not in the vocabulary"))
                    })
                    .collect()
            }
            _ => {
                let names = self.param_names();
                if let Some((extra, _)) = program.params.iter().find(|(n, _)| !names.contains(n)) {
                    return Err(format!("unknown param {extra:?}"));
                }
                names
                    .iter()
                    .map(|n| program.param(n).ok_or_else(|| format!("missing param {n}")))
                    .collect()
            }
        }
    }

    pub fn seed_code(&self) -> String {
        self.encode(&self.seed_params)
    }

    pub fn data_dir(&self, root: &Path) -> PathBuf {
        root.join(&self.id)
    }

    /// Writes the task definition the harness reads at evaluation time.
    pub fn write_data(&self, root: &Path) -> io::Result<PathBuf> {
        let dir = self.data_dir(root);
        std::fs::create_dir_all(&dir)?;
        let body = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(dir.join(TASK_FILE), body)?;
        Ok(dir)
    }

    pub fn task_spec(&self, harness: &Path, harness_args: &[String], data_root: &Path) -> TaskSpec {
        TaskSpec {
            id: self.id.clone(),
            description: self.description.clone(),
            harness: harness.to_path_buf(),
            harness_args: harness_args.to_vec(),
            data_dir: self.data_dir(data_root),
            artifact_name: "candidate.prog".into(),
            constraints: self.constraints.clone(),
        }
    }
}

fn range(label: &str, lo: f64, hi: f64) -> Constraint {
    Constraint::NumericRange {
        label: label.to_string(),
        pattern: format!(r"(?m)^\s*param {label} (\S+)"),
        min: lo,
        max: hi,
    }
}

pub fn builtin_tasks() -> Vec<SyntheticTask> {
    let target = "the quick brown fox jumps over the lazy dog";
    let mut vocabulary: Vec<String> = Vec::new();
    for w in target.split_whitespace().chain(["cat", "slow", "red", "under", "runs", "a"]) {
        if !vocabulary.iter().any(|v| v == w) {
            vocabulary.push(w.to_string());
        }
    }
    let index = |w: &str| vocabulary.iter().position(|v| v == w).unwrap() as f64;
    let token_seed: Vec<f64> = "a slow red cat runs under a lazy dog".split_whitespace().map(index).collect();
    let token_optimum: Vec<f64> = target.split_whitespace().map(index).collect();
    vec![
        SyntheticTask {
            id: QUADRATIC_1D.into(),
            description: "maximize 10 - (x - 3)^2".into(),
            kind: TaskKind::Quadratic { center: 3.0, peak: 10.0 },
            optimum: 10.0,
            optimum_params: vec![3.0],
            seed_params: vec![0.0],
            constraints: vec![Constraint::MaxCodeBytes { bytes: 4096 }, range("x", -100.0, 100.0)],
        },
        SyntheticTask {
            id: BIMODAL_2D.into(),
            description: "maximize the higher of two Gaussian bumps: height 4 at (-2,-2), height 8 at (3,3)".into(),
            kind: TaskKind::Bimodal {
                peaks: vec![
                    GaussianPeak { center: [-2.0, -2.0], height: 4.0, sd: 1.0 },
                    GaussianPeak { center: [3.0, 3.0], height: 8.0, sd: 0.75 },
                ],
            },
            optimum: 8.0,
            optimum_params: vec![3.0, 3.0],
            seed_params: vec![-1.5, -1.5],
            constraints: vec![
                Constraint::MaxCodeBytes { bytes: 4096 },
                range("x", -10.0, 10.0),
                range("y", -10.0, 10.0),
            ],
        },
        SyntheticTask {
            id: TOKEN_OVERLAP.into(),
            description: "choose nine words overlapping a hidden sentence".into(),
            kind: TaskKind::TokenOverlap { target: target.into(), vocabulary },
            optimum: 9.0,
            optimum_params: token_optimum,
            seed_params: token_seed,
            constraints: vec![Constraint::MaxCodeBytes { bytes: 4096 }],
        },
    ]
}

pub fn builtin_task(id: &str) -> Option<SyntheticTask> {
    builtin_tasks().into_iter().find(|t| t.id == id)
}

/// Writes task data for each task under `data_root` and registers them
/// against `harness`, which is invoked with `harness_args` ahead of the usual
/// artifact and data arguments.
pub fn install(tasks: &[SyntheticTask], harness: &Path, harness_args: &[String], data_root: &Path) -> io::Result<TaskRegistry> {
    let mut registry = TaskRegistry::new();
    for task in tasks {
        task.write_data(data_root)?;
        registry.register(task.task_spec(harness, harness_args, data_root));
    }
    Ok(registry)
}
