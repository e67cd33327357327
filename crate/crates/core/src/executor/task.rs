use std::collections::BTreeMap;
use std::path::PathBuf;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::ExecError;

/// A task-declared restriction on candidates. Static constraints look only at
/// the artifact text; `MaxRuntimeMs` also looks at the measured run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    MaxCodeBytes { bytes: usize },
    ForbiddenPattern { pattern: String },
    RequiredPattern { pattern: String },
    /// Every value captured by the regex's first group must parse as a number in `[min, max]`.
    NumericRange { label: String, pattern: String, min: f64, max: f64 },
    MaxRuntimeMs { ms: f64 },
}

impl Constraint {
    /// One-line human-readable form, as shown to agents.
    pub fn describe(&self) -> String {
        match self {
            Constraint::MaxCodeBytes { bytes } => format!("artifact at most {bytes} bytes"),
            Constraint::ForbiddenPattern { pattern } => format!("artifact must not contain {pattern:?}"),
            Constraint::RequiredPattern { pattern } => format!("artifact must contain {pattern:?}"),
            Constraint::NumericRange { label, min, max, .. } => format!("{label} in [{min}, {max}]"),
            Constraint::MaxRuntimeMs { ms } => format!("runtime at most {ms} ms"),
        }
    }

    pub fn check_static(&self, code: &str) -> Result<(), String> {
        match self {
            Constraint::MaxCodeBytes { bytes } if code.len() > *bytes => {
                Err(format!("artifact is {} bytes, limit {bytes}", code.len()))
            }
            Constraint::ForbiddenPattern { pattern } if code.contains(pattern.as_str()) => {
                Err(format!("artifact contains forbidden pattern {pattern:?}"))
            }
            Constraint::RequiredPattern { pattern } if !code.contains(pattern.as_str()) => {
                Err(format!("artifact lacks required pattern {pattern:?}"))
            }
            Constraint::NumericRange { label, pattern, min, max } => {
                let re = Regex::new(pattern).map_err(|e| format!("bad constraint pattern for {label}: {e}"))?;
                for caps in re.captures_iter(code) {
                    let raw = caps.get(1).map(|m| m.as_str()).unwrap_or_default();
                    let value: f64 = raw
                        .parse()
                        .map_err(|_| format!("{label} value {raw:?} is not a number"))?;
                    if !(value >= *min && value <= *max) {
                        return Err(format!("{label} = {value} outside [{min}, {max}]"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn check_run(&self, runtime_ms: f64) -> Result<(), String> {
        match self {
            Constraint::MaxRuntimeMs { ms } if runtime_ms > *ms => {
                Err(format!("runtime {runtime_ms:.1} ms exceeds {ms} ms"))
            }
            _ => Ok(()),
        }
    }
}

/// Binds a task id to its evaluation harness, data directory and constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Program invoked as `harness <artifact path> <data dir>`.
    pub harness: PathBuf,
    /// Arguments placed before the artifact and data paths.
    #[serde(default)]
    pub harness_args: Vec<String>,
    pub data_dir: PathBuf,
    #[serde(default = "default_artifact_name")]
    pub artifact_name: String,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

fn default_artifact_name() -> String {
    "candidate".to_string()
}

impl TaskSpec {
    pub fn check_static(&self, code: &str) -> Result<(), String> {
        self.constraints.iter().try_for_each(|c| c.check_static(code))
    }

    pub fn check_run(&self, runtime_ms: f64) -> Result<(), String> {
        self.constraints.iter().try_for_each(|c| c.check_run(runtime_ms))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskRegistry {
    tasks: BTreeMap<String, TaskSpec>,
}

impl TaskRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: TaskSpec) {
        self.tasks.insert(spec.id.clone(), spec);
    }

    pub fn get(&self, id: &str) -> Result<&TaskSpec, ExecError> {
        self.tasks.get(id).ok_or_else(|| ExecError::UnknownTask(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_constraints() {
        let range = Constraint::NumericRange {
            label: "x".into(),
            pattern: r"(?m)^param x (\S+)".into(),
            min: -10.0,
            max: 10.0,
        };
        assert!(range.check_static("param x 3.5\n").is_ok());
        assert!(range.check_static("param x 11\n").unwrap_err().contains("outside"));
        assert!(range.check_static("param x abc\n").unwrap_err().contains("not a number"));
        assert!(Constraint::MaxCodeBytes { bytes: 3 }.check_static("abcd").is_err());
        assert!(Constraint::ForbiddenPattern { pattern: "sleep".into() }
            .check_static("sleep 1")
            .is_err());
        assert!(Constraint::RequiredPattern { pattern: "task".into() }
            .check_static("task q")
            .is_ok());
    }

    #[test]
    fn runtime_constraint_only_applies_to_runs() {
        let c = Constraint::MaxRuntimeMs { ms: 10.0 };
        assert!(c.check_static("anything").is_ok());
        assert!(c.check_run(5.0).is_ok());
        assert!(c.check_run(50.0).is_err());
    }
}
