//! Structural redesign: a fresh seed artifact derived from the best elite.

use std::fmt::Write as _;

use rand::Rng;

use super::backend::{AgentRole, CompletionBackend, CompletionRequest};
use super::context::{extract_fenced, fenced};
use super::AgentError;
use crate::elite_pool::{ElitePool, EliteTrajectory};

const SYSTEM: &str = "You redesign algorithms. Starting from the best artifact found so far and lessons from \
other lineages, write a holistically restructured artifact that keeps its strengths. Reply with the \
complete new artifact in a single fenced code block.";

pub fn design_prompt(elite: &EliteTrajectory, others: &[&EliteTrajectory], epoch: u64, total_epochs: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "## Progress\nepoch {epoch} of {total_epochs}");
    let _ = writeln!(
        out,
        "\n## Best elite artifact\nlineage {}, reward {:.6}",
        elite.source_tree,
        elite.final_reward()
    );
    out.push_str(&fenced(&elite.final_code));
    let _ = writeln!(out, "\n## Its trajectory");
    for (i, s) in elite.trajectory.steps.iter().enumerate() {
        let _ = writeln!(out, "{i}. {} | delta {:+.6}", s.modification_summary, s.delta_reward);
    }
    if !others.is_empty() {
        let _ = writeln!(out, "\n## Similar elite trajectories from other lineages");
        for e in others {
            let path: Vec<&str> = e.trajectory.steps.iter().map(|s| s.modification_summary.as_str()).collect();
            let _ = writeln!(out, "- {} reward {:.6}: {}", e.source_tree, e.final_reward(), path.join(" -> "));
        }
    }
    out.push_str("\nWrite the redesigned artifact.\n");
    out
}

/// Drafts a new seed from the best elite trajectory, showing the backend up
/// to `exemplars` similar trajectories from other lineages. Re-asks up to
/// `reasks` times if the reply has no code block.
#[allow(clippy::too_many_arguments)]
pub fn design<R: Rng + ?Sized>(
    pool: &ElitePool,
    backend: &dyn CompletionBackend,
    exemplars: usize,
    reasks: u32,
    temperature: f64,
    epoch: u64,
    total_epochs: u64,
    rng: &mut R,
) -> Result<String, AgentError> {
    let elite = pool
        .best()
        .ok_or_else(|| AgentError::Precondition("elite pool is empty".into()))?;
    let others: Vec<&EliteTrajectory> = pool
        .sample_trajectories(&elite.feature_vector, pool.len(), rng)
        .into_iter()
        .filter(|e| e.source_tree != elite.source_tree)
        .take(exemplars)
        .collect();
    let base = design_prompt(elite, &others, epoch, total_epochs);
    let mut user = base.clone();
    for _ in 0..=reasks {
        let request = CompletionRequest {
            role: AgentRole::Designer,
            system: SYSTEM.to_string(),
            user: user.clone(),
            temperature,
        };
        let reply = backend.complete(&request)?;
        if let Some(code) = extract_fenced(&reply) {
            return Ok(code);
        }
        user = format!("{base}\n## Format reminder\nYour previous reply had no fenced code block.\n");
    }
    Err(AgentError::Format { attempts: reasks + 1, message: "no fenced code block in redesign".into() })
}

/// Median by sorting; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 { sorted[mid] } else { (sorted[mid - 1] + sorted[mid]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::backend::ScriptedBackend;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_by_sort() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn empty_pool_is_a_precondition_error() {
        let backend = ScriptedBackend::new(|_| Ok("```\nx\n```".into()));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = design(&ElitePool::new(2), &backend, 2, 1, 0.0, 0, 1, &mut rng).unwrap_err();
        assert!(matches!(err, AgentError::Precondition(_)));
    }
}
