//! The in-context policy: proposes the next modification of the focal node.

use serde::{Deserialize, Serialize};

use super::backend::{AgentRole, CompletionBackend, CompletionRequest};
use super::context::{Context, Mode};
use super::AgentError;

pub const HIGH_LEVEL: &str = "[HIGH-LEVEL]";
pub const DETAILED: &str = "[DETAILED]";
pub const ANALYSIS: &str = "[ANALYSIS]";
pub const DEFAULT_REASKS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub expected_gain: String,
    pub risks: String,
    pub fallback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// One-line summary, used for tree logging and retrieval.
    pub high_level: String,
    /// Execution-ready description for the modify agent.
    pub detailed_spec: String,
    pub analysis: Analysis,
}

const SYSTEM_BASE: &str = "You are the planning policy of an evolutionary code optimizer. You see a candidate \
artifact, its lineage with reward deltas, attempts made by its siblings, and high-value patterns from other \
lineages. Propose exactly one modification of the current artifact.

Reply with exactly these three sections:
[HIGH-LEVEL]
<one sentence naming the modification>
[DETAILED]
<an execution-ready description of the change>
[ANALYSIS]
Expected gain: <why this should raise the reward>
Risks: <what could go wrong>
Fallback: <what to try if it fails>";

pub fn system_prompt(mode: Mode) -> String {
    let guidance = match mode {
        Mode::Warmup => "Mode: warmup. Make a conservative, low-risk micro-edit close to the current trajectory.",
        Mode::Explore => {
            "Mode: explore. Seek a modification that diverges from the approaches already tried, \
             drawing on the most different elite exemplars."
        }
        Mode::Exploit => {
            "Mode: exploit. Make a small, verifiable refinement that reuses the highest-value elite modifications."
        }
    };
    format!("{SYSTEM_BASE}\n\n{guidance}")
}

fn sections(text: &str) -> Vec<(&'static str, &str)> {
    let mut found: Vec<(usize, &'static str)> = [HIGH_LEVEL, DETAILED, ANALYSIS]
        .into_iter()
        .filter_map(|m| text.find(m).map(|i| (i, m)))
        .collect();
    found.sort();
    found
        .iter()
        .enumerate()
        .map(|(i, (start, marker))| {
            let body_start = start + marker.len();
            let end = found.get(i + 1).map(|(s, _)| *s).unwrap_or(text.len());
            (*marker, text[body_start..end].trim())
        })
        .collect()
}

fn analysis_field(body: &str, label: &str) -> String {
    let mut value = String::new();
    let mut inside = false;
    for line in body.lines() {
        let t = line.trim();
        let lower = t.to_ascii_lowercase();
        let starts_field = ["expected gain:", "risks:", "fallback:"].iter().any(|f| lower.starts_with(f));
        if lower.starts_with(label) {
            inside = true;
            value.push_str(t[label.len()..].trim());
        } else if starts_field {
            inside = false;
        } else if inside && !t.is_empty() {
            value.push(' ');
            value.push_str(t);
        }
    }
    value.trim().to_string()
}

pub fn parse_proposal(text: &str) -> Result<Proposal, String> {
    let found = sections(text);
    let get = |marker: &str| {
        found
            .iter()
            .find(|(m, _)| *m == marker)
            .map(|(_, body)| *body)
            .filter(|b| !b.is_empty())
            .ok_or_else(|| format!("missing or empty {marker} section"))
    };
    let high_level = get(HIGH_LEVEL)?.lines().map(str::trim).collect::<Vec<_>>().join(" ");
    let detailed_spec = get(DETAILED)?.to_string();
    let analysis_body = get(ANALYSIS)?;
    let analysis = Analysis {
        expected_gain: analysis_field(analysis_body, "expected gain:"),
        risks: analysis_field(analysis_body, "risks:"),
        fallback: analysis_field(analysis_body, "fallback:"),
    };
    for (name, value) in [
        ("Expected gain", &analysis.expected_gain),
        ("Risks", &analysis.risks),
        ("Fallback", &analysis.fallback),
    ] {
        if value.is_empty() {
            return Err(format!("{ANALYSIS} lacks a non-empty {name} line"));
        }
    }
    Ok(Proposal { high_level, detailed_spec, analysis })
}

pub fn format_reminder(error: &str) -> String {
    format!(
        "\n## Format reminder\nYour previous reply could not be used: {error}. Reply again with the \
         {HIGH_LEVEL}, {DETAILED} and {ANALYSIS} sections, each non-empty.\n"
    )
}

/// Asks the backend for a proposal, re-asking with a format reminder up to
/// `reasks` times. Returns the proposal and the number of attempts used.
pub fn next_step(
    context: &Context,
    backend: &dyn CompletionBackend,
    max_tokens: usize,
    reasks: u32,
    temperature: f64,
) -> Result<(Proposal, u32), AgentError> {
    let system = system_prompt(context.mode);
    let user = context.render_within(max_tokens);
    let mut prompt = user.clone();
    let mut last_error = String::new();
    for attempt in 1..=reasks + 1 {
        let request = CompletionRequest {
            role: AgentRole::NextStepper,
            system: system.clone(),
            user: prompt.clone(),
            temperature,
        };
        let reply = backend.complete(&request)?;
        match parse_proposal(&reply) {
            Ok(proposal) => return Ok((proposal, attempt)),
            Err(e) => {
                prompt = format!("{user}{}", format_reminder(&e));
                last_error = e;
            }
        }
    }
    Err(AgentError::Format { attempts: reasks + 1, message: last_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "[HIGH-LEVEL]\nIncrease x.\n[DETAILED]\nset x to 2\n[ANALYSIS]\nExpected gain: closer to the peak\nRisks: overshoot\nFallback: halve the step\n";

    #[test]
    fn parses_all_sections() {
        let p = parse_proposal(GOOD).unwrap();
        assert_eq!(p.high_level, "Increase x.");
        assert_eq!(p.detailed_spec, "set x to 2");
        assert_eq!(p.analysis.risks, "overshoot");
        assert_eq!(p.analysis.fallback, "halve the step");
    }

    #[test]
    fn multi_line_analysis_fields_are_joined() {
        let text = GOOD.replace("Risks: overshoot", "Risks: overshoot\n  past the peak");
        assert_eq!(parse_proposal(&text).unwrap().analysis.risks, "overshoot past the peak");
    }

    #[test]
    fn missing_or_empty_sections_are_errors() {
        assert!(parse_proposal(&GOOD.replace("[DETAILED]", "")).unwrap_err().contains("[DETAILED]"));
        assert!(parse_proposal("[HIGH-LEVEL]\n[DETAILED]\nx\n[ANALYSIS]\nExpected gain: a\nRisks: b\nFallback: c")
            .unwrap_err()
            .contains("[HIGH-LEVEL]"));
        assert!(parse_proposal(&GOOD.replace("Fallback: halve the step", "")).unwrap_err().contains("Fallback"));
    }
}
