//! Turns a proposal into a concrete artifact and validates it, repairing
//! failed candidates a bounded number of times.

use std::fmt::Write as _;

use super::backend::{AgentRole, CompletionBackend, CompletionRequest};
use super::context::{extract_fenced, fenced};
use super::next_step::Proposal;
use super::AgentError;
use crate::executor::{EvalLimits, EvalMode, EvalRequest, EvalResult, Executor};
use crate::forest::AlgorithmNode;

pub const DEFAULT_DEBUG_RETRIES: u32 = 3;

const SYSTEM: &str = "You implement one planned modification of an artifact. Make the minimal change that \
realizes the plan and keep everything else identical. Reply with the complete modified artifact in a single \
fenced code block.";

#[derive(Debug, Clone, PartialEq)]
pub struct ModifySettings {
    pub task_ref: String,
    pub limits: EvalLimits,
    pub max_debug_retries: u32,
    pub temperature: f64,
    pub epoch: u64,
    pub total_epochs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifyOutcome {
    /// Artifact of the last attempt.
    pub code: String,
    pub result: EvalResult,
    /// Repairs requested after the first attempt.
    pub debug_attempts: u32,
    /// Failure reason of every unsuccessful attempt, in order.
    pub failures: Vec<String>,
    /// Line-level edit distance to the parent, normalized to [0, 1].
    pub edit_distance: f64,
}

/// Levenshtein distance over lines divided by the longer line count.
pub fn normalized_line_distance(a: &str, b: &str) -> f64 {
    let a: Vec<&str> = a.lines().collect();
    let b: Vec<&str> = b.lines().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, la) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, lb) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(la != lb);
            cur[j + 1] = subst.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()] as f64 / longest as f64
}

pub fn modify_prompt(proposal: &Proposal, parent: &AlgorithmNode, settings: &ModifySettings) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## Progress\nepoch {} of {}", settings.epoch, settings.total_epochs);
    let _ = writeln!(out, "\n## Parent artifact\nnode {}, reward {:.6}", parent.id, parent.reward);
    out.push_str(&fenced(&parent.code));
    let _ = writeln!(out, "\n## Modification\n{}\n{}", proposal.high_level, proposal.detailed_spec);
    let _ = writeln!(
        out,
        "\n## Instructions\nReturn the complete modified artifact in one fenced code block. \
         Change only what the modification requires."
    );
    out
}

pub fn repair_prompt(base: &str, attempt: u32, max: u32, failed_code: &str, reason: &str) -> String {
    format!(
        "{base}\n## Repair attempt {attempt} of {max}\nThe previous candidate failed: {reason}\n{}\
         Fix the failure while preserving the original modification intent.\n",
        fenced(failed_code)
    )
}

/// Dry run first, then the full evaluation. Constraint checks happen inside
/// the executor before either run.
pub fn validate_candidate(
    code: &str,
    executor: &Executor,
    task_ref: &str,
    limits: EvalLimits,
) -> Result<EvalResult, AgentError> {
    let mut request = EvalRequest { code: code.to_string(), task_ref: task_ref.to_string(), limits, mode: EvalMode::DryRun };
    let probe = executor.evaluate(&request)?;
    if !probe.is_success() {
        return Ok(probe);
    }
    request.mode = EvalMode::Full;
    Ok(executor.evaluate(&request)?)
}

pub fn modify(
    proposal: &Proposal,
    parent: &AlgorithmNode,
    backend: &dyn CompletionBackend,
    executor: &Executor,
    settings: &ModifySettings,
) -> Result<ModifyOutcome, AgentError> {
    let base = modify_prompt(proposal, parent, settings);
    let mut prompt = base.clone();
    let mut failures = Vec::new();
    let mut attempt = 0;
    loop {
        let request = CompletionRequest {
            role: AgentRole::Modify,
            system: SYSTEM.to_string(),
            user: prompt,
            temperature: settings.temperature,
        };
        let reply = backend.complete(&request)?;
        let (code, result) = match extract_fenced(&reply) {
            Some(code) => {
                let result = validate_candidate(&code, executor, &settings.task_ref, settings.limits)?;
                (code, result)
            }
            None => (reply.clone(), EvalResult::failure("reply contained no fenced code block", 0.0)),
        };
        let done = result.is_success() || attempt == settings.max_debug_retries;
        if let Some(reason) = result.reason() {
            failures.push(reason.to_string());
        }
        if done {
            return Ok(ModifyOutcome {
                edit_distance: normalized_line_distance(&parent.code, &code),
                code,
                result,
                debug_attempts: attempt,
                failures,
            });
        }
        attempt += 1;
        let reason = failures.last().expect("failed attempt recorded");
        prompt = repair_prompt(&base, attempt, settings.max_debug_retries, &code, reason);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_distance() {
        assert_eq!(normalized_line_distance("", ""), 0.0);
        assert_eq!(normalized_line_distance("a\nb\n", "a\nb\n"), 0.0);
        assert_eq!(normalized_line_distance("a\nb\n", "a\nc\n"), 0.5);
        assert_eq!(normalized_line_distance("a\n", "a\nb\nc\nd\n"), 0.75);
        assert_eq!(normalized_line_distance("x\n", ""), 1.0);
    }

    #[test]
    fn repair_prompt_carries_reason_and_intent() {
        let p = repair_prompt("BASE\n", 2, 3, "task q\n", "timeout after 1s");
        assert!(p.starts_with("BASE\n"));
        assert!(p.contains("## Repair attempt 2 of 3"));
        assert!(p.contains("timeout after 1s"));
        assert!(p.contains("original modification intent"));
    }
}
