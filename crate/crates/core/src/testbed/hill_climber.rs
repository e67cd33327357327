//! A scripted stand-in for the language model: proposes parameter
//! perturbations with a step that decays over epochs, applies them, and
//! optionally injects failing candidates to exercise repair and pruning.
//!
//! It is a pure function of the request, reading the epoch, the focal
//! artifact and the plan back out of the prompts, so it needs no cursor state
//! and resumes trivially from checkpoints.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Directive, Program, SyntheticTask, TaskKind};
use crate::agents::{extract_fenced, fenced, AgentRole, BackendError, CompletionBackend, CompletionRequest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClimberConfig {
    pub initial_step: f64,
    /// Per-epoch multiplicative step decay.
    pub decay: f64,
    /// Magnitude of redesign jumps, relative to `initial_step`.
    pub redesign_scale: f64,
}

impl Default for ClimberConfig {
    fn default() -> Self {
        Self { initial_step: 2.0, decay: 0.85, redesign_scale: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// Sleeps far beyond any sensible wall-clock limit.
    Timeout,
    /// Prints text after the score line.
    Malformed,
    /// Exits with a nonzero status.
    Crash,
    /// Touches more memory than any sensible limit.
    Memory,
    /// Violates the task's numeric range constraint.
    Constraint,
    /// Not a well-formed artifact at all.
    Syntax,
}

/// Epochs `e` with `e % period == offset` get `failing_attempts` broken
/// candidates before a clean one (or none, if that exceeds the retry budget).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailurePlan {
    pub period: u64,
    pub offset: u64,
    pub failing_attempts: u32,
    pub kinds: Vec<FailureKind>,
}

impl FailurePlan {
    fn failure_for(&self, epoch: u64, attempt: u32) -> Option<FailureKind> {
        if self.kinds.is_empty() || self.period == 0 || epoch % self.period != self.offset % self.period {
            return None;
        }
        if attempt >= self.failing_attempts {
            return None;
        }
        let i = (epoch / self.period) as usize + attempt as usize;
        Some(self.kinds[i % self.kinds.len()])
    }
}

#[derive(Debug, Clone)]
pub struct HillClimber {
    task: SyntheticTask,
    config: ClimberConfig,
    failures: Option<FailurePlan>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn epoch_of(prompt: &str) -> Result<u64, BackendError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^epoch (\d+) of \d+").expect("valid regex"));
    re.captures(prompt)
        .and_then(|c| c[1].parse().ok())
        .ok_or_else(|| BackendError::Protocol("prompt carries no epoch line".into()))
}

fn code_after(prompt: &str, heading: &str) -> Result<String, BackendError> {
    let at = prompt
        .find(heading)
        .ok_or_else(|| BackendError::Protocol(format!("prompt lacks {heading}")))?;
    extract_fenced(&prompt[at..]).ok_or_else(|| BackendError::Protocol(format!("no artifact under {heading}")))
}

fn section<'a>(prompt: &'a str, heading: &str) -> &'a str {
    let Some(at) = prompt.find(heading) else { return "" };
    let body = &prompt[at + heading.len()..];
    let end = body.find("\n## ").unwrap_or(body.len());
    &body[..end]
}

fn repair_attempt(prompt: &str) -> u32 {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?m)^## Repair attempt (\d+) of").expect("valid regex"));
    re.captures(prompt).and_then(|c| c[1].parse().ok()).unwrap_or(0)
}

impl HillClimber {
    pub fn new(task: SyntheticTask, config: ClimberConfig) -> Self {
        Self { task, config, failures: None }
    }

    pub fn with_failures(mut self, plan: FailurePlan) -> Self {
        self.failures = Some(plan);
        self
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    fn step(&self, epoch: u64) -> f64 {
        self.config.initial_step * self.config.decay.powi(epoch.min(i32::MAX as u64) as i32)
    }

    fn vocabulary(&self) -> Option<&[String]> {
        match &self.task.kind {
            TaskKind::TokenOverlap { vocabulary, .. } => Some(vocabulary),
            _ => None,
        }
    }

    fn propose(&self, prompt: &str) -> Result<String, BackendError> {
        let epoch = epoch_of(prompt)?;
        let code = code_after(prompt, "## Current state")?;
        let params = self.task.decode(&code).map_err(BackendError::Protocol)?;
        let names = self.task.param_names();
        let n = names.len() as u64;
        let i = (epoch % n) as usize;
        let (summary, detail) = if let Some(vocab) = self.vocabulary() {
            let current = params[i].round() as u64;
            let shift = 1 + splitmix(epoch) % (vocab.len() as u64 - 1);
            let word = &vocab[((current + shift) % vocab.len() as u64) as usize];
            (format!("Replace word {i}."), format!("set {} to {word}", names[i]))
        } else {
            let up = (epoch / n).is_multiple_of(2);
            let step = self.step(epoch);
            let value = params[i] + if up { step } else { -step };
            let verb = if up { "Increase" } else { "Decrease" };
            (format!("{verb} {}. Step {step:.6}.", names[i]), format!("set {} to {value}", names[i]))
        };
        Ok(format!(
            "[HIGH-LEVEL]\n{summary}\n[DETAILED]\n{detail}\n[ANALYSIS]\nExpected gain: moves {} toward a better score\n\
             Risks: the step may overshoot\nFallback: try the opposite direction with a smaller step\n",
            names[i]
        ))
    }

    fn apply(&self, code: &str, plan: &str) -> Result<Program, BackendError> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| Regex::new(r"(?m)^set (\S+) to (\S+)\s*$").expect("valid regex"));
        let mut program = Program::parse(code).map_err(BackendError::Protocol)?;
        for caps in re.captures_iter(plan) {
            let (name, value) = (&caps[1], &caps[2]);
            if let Some(slot) = name.strip_prefix('w').and_then(|s| s.parse::<usize>().ok()) {
                let text = program.text.clone().unwrap_or_default();
                let mut words: Vec<&str> = text.split_whitespace().collect();
                if slot < words.len() {
                    words[slot] = value;
                }
                program.text = Some(words.join(" "));
            } else {
                let value: f64 = value.parse().map_err(|_| BackendError::Protocol(format!("bad value {value}")))?;
                match program.params.iter_mut().find(|(n, _)| n == name) {
                    Some(p) => p.1 = value,
                    None => program.params.push((name.to_string(), value)),
                }
            }
        }
        Ok(program)
    }

    fn break_program(&self, program: &mut Program, kind: FailureKind) -> Option<String> {
        match kind {
            FailureKind::Timeout => program.directives.push(Directive::Sleep(3600.0)),
            FailureKind::Malformed => program.directives.push(Directive::Trailer("done".into())),
            FailureKind::Crash => {
                program.directives.push(Directive::Emit("segmentation fault (simulated)".into()));
                program.directives.push(Directive::Exit(3));
            }
            FailureKind::Memory => program.directives.push(Directive::Alloc(1 << 16)),
            FailureKind::Constraint => {
                if let Some(p) = program.params.first_mut() {
                    p.1 = 1e6;
                }
            }
            FailureKind::Syntax => return Some(format!("{}param\n", program.render())),
        }
        None
    }

    fn implement(&self, prompt: &str) -> Result<String, BackendError> {
        let epoch = epoch_of(prompt)?;
        let parent = code_after(prompt, "## Parent artifact")?;
        let plan = section(prompt, "## Modification");
        let mut program = self.apply(&parent, plan)?;
        let attempt = repair_attempt(prompt);
        let mut text = None;
        if let Some(kind) = self.failures.as_ref().and_then(|f| f.failure_for(epoch, attempt)) {
            text = self.break_program(&mut program, kind);
        }
        let code = text.unwrap_or_else(|| program.render());
        Ok(format!("Here is the modified artifact.\n{}", fenced(&code)))
    }

    fn redesign(&self, prompt: &str) -> Result<String, BackendError> {
        let epoch = epoch_of(prompt)?;
        let code = code_after(prompt, "## Best elite artifact")?;
        let mut params = self.task.decode(&code).map_err(BackendError::Protocol)?;
        if let Some(vocab) = self.vocabulary() {
            let slot = (splitmix(epoch) % params.len() as u64) as usize;
            params[slot] = (splitmix(epoch ^ 0xA5A5) % vocab.len() as u64) as f64;
        } else {
            let scale = self.config.initial_step * self.config.redesign_scale;
            for (i, p) in params.iter_mut().enumerate() {
                let r = splitmix(epoch.wrapping_mul(31).wrapping_add(i as u64));
                let unit = (r >> 11) as f64 / (1u64 << 53) as f64;
                *p += scale * (2.0 * unit - 1.0);
            }
        }
        Ok(fenced(&self.task.encode(&params)))
    }

    fn summarize(&self, prompt: &str) -> String {
        let mut counts: Vec<(String, usize)> = Vec::new();
        for line in prompt.lines().filter(|l| l.starts_with("  ")) {
            let Some((_, rest)) = line.trim().split_once(". ") else { continue };
            let summary = rest.split(" | ").next().unwrap_or_default().to_string();
            match counts.iter_mut().find(|(s, _)| *s == summary) {
                Some(c) => c.1 += 1,
                None => counts.push((summary, 1)),
            }
        }
        let top = counts
            .iter()
            .filter(|(s, _)| s != "seed" && s != "redesign")
            .max_by_key(|(_, c)| *c)
            .map(|(s, _)| s.as_str())
            .unwrap_or("none");
        format!("[SUMMARY] Repeated small single-parameter moves paid off. Most frequent productive step: {top}")
    }
}

impl CompletionBackend for HillClimber {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        match request.role {
            AgentRole::NextStepper => self.propose(&request.user),
            AgentRole::Modify => self.implement(&request.user),
            AgentRole::Designer => self.redesign(&request.user),
            AgentRole::Summarizer => Ok(self.summarize(&request.user)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::parse_proposal;
    use crate::testbed::{builtin_task, QUADRATIC_1D, TOKEN_OVERLAP};

    fn req(role: AgentRole, user: String) -> CompletionRequest {
        CompletionRequest { role, system: String::new(), user, temperature: 0.0 }
    }

    fn state_prompt(epoch: u64, code: &str) -> String {
        format!("## Progress\nepoch {epoch} of 50 (1 remaining)\n\n## Current state\nreward 1\n{}", fenced(code))
    }

    fn modify_prompt(epoch: u64, code: &str, plan: &str, repair: Option<u32>) -> String {
        let mut p = format!(
            "## Progress\nepoch {epoch} of 50\n\n## Parent artifact\nnode n0\n{}\n## Modification\nx\n{plan}\n\n## Instructions\nok\n",
            fenced(code)
        );
        if let Some(k) = repair {
            p.push_str(&format!("\n## Repair attempt {k} of 3\nfailed\n"));
        }
        p
    }

    #[test]
    fn proposals_alternate_direction_with_decaying_step() {
        let climber = HillClimber::new(builtin_task(QUADRATIC_1D).unwrap(), ClimberConfig::default());
        let seed = "task quadratic-1d\nparam x 0\n";
        let p0 = parse_proposal(&climber.complete(&req(AgentRole::NextStepper, state_prompt(0, seed))).unwrap()).unwrap();
        assert_eq!(p0.detailed_spec, "set x to 2");
        assert!(p0.high_level.starts_with("Increase x."));
        let p1 = parse_proposal(&climber.complete(&req(AgentRole::NextStepper, state_prompt(1, seed))).unwrap()).unwrap();
        assert_eq!(p1.detailed_spec, "set x to -1.7");
    }

    #[test]
    fn modify_applies_the_plan() {
        let climber = HillClimber::new(builtin_task(QUADRATIC_1D).unwrap(), ClimberConfig::default());
        let reply = climber
            .complete(&req(AgentRole::Modify, modify_prompt(4, "task quadratic-1d\nparam x 0\n", "set x to 2.5", None)))
            .unwrap();
        assert_eq!(extract_fenced(&reply).unwrap(), "task quadratic-1d\nparam x 2.5\n");
    }

    #[test]
    fn failure_plan_breaks_early_attempts_only() {
        let plan = FailurePlan { period: 5, offset: 2, failing_attempts: 2, kinds: vec![FailureKind::Timeout, FailureKind::Malformed] };
        let climber = HillClimber::new(builtin_task(QUADRATIC_1D).unwrap(), ClimberConfig::default()).with_failures(plan);
        let ask = |epoch, repair| {
            let reply = climber
                .complete(&req(AgentRole::Modify, modify_prompt(epoch, "task quadratic-1d\nparam x 0\n", "set x to 1", repair)))
                .unwrap();
            extract_fenced(&reply).unwrap()
        };
        assert!(ask(2, None).contains("sleep 3600"));
        assert!(ask(2, Some(1)).contains("trailer done"));
        assert_eq!(ask(2, Some(2)), "task quadratic-1d\nparam x 1\n");
        assert_eq!(ask(3, None), "task quadratic-1d\nparam x 1\n");
    }

    #[test]
    fn token_task_replaces_words() {
        let task = builtin_task(TOKEN_OVERLAP).unwrap();
        let climber = HillClimber::new(task.clone(), ClimberConfig::default());
        let seed = task.seed_code();
        let p = parse_proposal(&climber.complete(&req(AgentRole::NextStepper, state_prompt(3, &seed))).unwrap()).unwrap();
        assert!(p.detailed_spec.starts_with("set w3 to "));
        let reply = climber.complete(&req(AgentRole::Modify, modify_prompt(3, &seed, &p.detailed_spec, None))).unwrap();
        let code = extract_fenced(&reply).unwrap();
        assert!(task.decode(&code).is_ok());
        assert_ne!(code, seed);
    }
}
