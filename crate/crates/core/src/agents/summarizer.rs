//! Distills productive modification sequences into reusable summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::backend::{AgentRole, CompletionBackend, CompletionRequest};
use super::AgentError;
use crate::features::{FeatureProvider, FeatureVector};
use crate::forest::Trajectory;

/// Summaries more similar than this are treated as the same pattern.
pub const DUPLICATE_COSINE: f64 = 0.95;
pub const DEFAULT_SUMMARY_CAP: usize = 32;

const SYSTEM: &str = "You analyze optimization histories. Given lineages of code modifications with their \
reward deltas, describe in a few sentences which modification sequences were productive and why. \
Start your reply with [SUMMARY].";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    /// Number of modifications observed.
    pub frequency: usize,
    pub mean_gain: f64,
    /// Population variance of the modification deltas.
    pub variance: f64,
}

impl PatternStats {
    /// Statistics over every non-root step of the given trajectories.
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Self {
        let deltas: Vec<f64> = trajectories
            .iter()
            .flat_map(|t| t.steps.iter().skip(1).map(|s| s.delta_reward))
            .collect();
        if deltas.is_empty() {
            return Self { frequency: 0, mean_gain: 0.0, variance: 0.0 };
        }
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let variance = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        Self { frequency: deltas.len(), mean_gain: mean, variance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub pattern_stats: PatternStats,
    pub feature_vector: FeatureVector,
    pub created_epoch: u64,
}

/// Bounded collection of summaries with near-duplicate suppression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStore {
    cap: usize,
    summaries: Vec<Summary>,
}

impl Default for SummaryStore {
    fn default() -> Self {
        Self::new(DEFAULT_SUMMARY_CAP)
    }
}

impl SummaryStore {
    pub fn new(cap: usize) -> Self {
        assert!(cap > 0, "summary store capacity must be positive");
        Self { cap, summaries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.summaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }

    pub fn summaries(&self) -> &[Summary] {
        &self.summaries
    }

    /// Adds a summary. A near-duplicate of an existing entry replaces it only
    /// with a higher mean gain; past the cap the lowest-gain entry (oldest on
    /// ties) is evicted. Returns whether `summary` is in the store afterwards.
    pub fn insert(&mut self, summary: Summary) -> bool {
        if let Some(i) = self
            .summaries
            .iter()
            .position(|s| s.feature_vector.cosine(&summary.feature_vector) > DUPLICATE_COSINE)
        {
            if summary.pattern_stats.mean_gain > self.summaries[i].pattern_stats.mean_gain {
                self.summaries.remove(i);
            } else {
                return false;
            }
        }
        self.summaries.push(summary);
        if self.summaries.len() > self.cap {
            let mut worst = 0;
            for (i, s) in self.summaries.iter().enumerate() {
                if s.pattern_stats.mean_gain < self.summaries[worst].pattern_stats.mean_gain {
                    worst = i;
                }
            }
            let evicted_new = worst == self.summaries.len() - 1;
            self.summaries.remove(worst);
            return !evicted_new;
        }
        true
    }

    /// The `count` summaries most similar to `query`; ties go to higher mean
    /// gain, then to older entries.
    pub fn retrieve(&self, query: &FeatureVector, count: usize) -> Vec<&Summary> {
        let mut ranked: Vec<(usize, f64, &Summary)> = self
            .summaries
            .iter()
            .enumerate()
            .map(|(i, s)| (i, query.cosine(&s.feature_vector), s))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(b.2.pattern_stats.mean_gain.total_cmp(&a.2.pattern_stats.mean_gain))
                .then(a.0.cmp(&b.0))
        });
        ranked.into_iter().take(count).map(|(_, _, s)| s).collect()
    }
}

pub fn summary_prompt(trajectories: &[Trajectory]) -> String {
    let mut out = String::from("## Lineages\n");
    for t in trajectories {
        let _ = writeln!(out, "lineage {} (final reward {:.6}):", t.tree_id, t.final_reward);
        for (i, s) in t.steps.iter().enumerate() {
            let _ = writeln!(out, "  {i}. {} | delta {:+.6}", s.modification_summary, s.delta_reward);
        }
    }
    out.push_str("\nDescribe the productive modification patterns.\n");
    out
}

/// Produces one summary for a batch of trajectories. The text comes from the
/// backend; statistics and features are computed locally.
pub fn summarize(
    trajectories: &[Trajectory],
    backend: &dyn CompletionBackend,
    provider: &dyn FeatureProvider,
    temperature: f64,
    epoch: u64,
) -> Result<Summary, AgentError> {
    if trajectories.is_empty() {
        return Err(AgentError::Precondition("summarize needs at least one trajectory".into()));
    }
    let request = CompletionRequest {
        role: AgentRole::Summarizer,
        system: SYSTEM.to_string(),
        user: summary_prompt(trajectories),
        temperature,
    };
    let reply = backend.complete(&request)?;
    let text = reply.trim().trim_start_matches("[SUMMARY]").trim().to_string();
    if text.is_empty() {
        return Err(AgentError::Format { attempts: 1, message: "empty summary".into() });
    }
    let feature_text: Vec<String> = trajectories.iter().map(Trajectory::feature_text).collect();
    Ok(Summary {
        text,
        pattern_stats: PatternStats::from_trajectories(trajectories),
        feature_vector: provider.features(&feature_text.join(" ")),
        created_epoch: epoch,
    })
}
