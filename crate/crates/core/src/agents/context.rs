//! Prompt context for the in-context policy: goal, focal state, lineage,
//! near-field comparisons and cross-lineage memory, rendered under a token
//! budget.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::summarizer::SummaryStore;
use super::AgentError;
use crate::elite_pool::{EliteTrajectory, ElitePool};
use crate::features::{FeatureProvider, FeatureVector};
use crate::forest::{Forest, NodeId, NodeStatus, TrajectoryStep, TreeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Warmup,
    Explore,
    Exploit,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Warmup => "warmup",
            Mode::Explore => "explore",
            Mode::Exploit => "exploit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeThresholds {
    pub warmup_epochs: u64,
    /// Epochs without a new forest best before exploring.
    pub plateau: u64,
    /// Mean forest diversity below which to explore.
    pub diversity: f64,
    /// Consecutive improving attempts needed to exploit.
    pub streak: usize,
    /// Minimum top elite-modification value needed to exploit.
    pub value: f64,
}

impl Default for ModeThresholds {
    fn default() -> Self {
        Self { warmup_epochs: 10, plateau: 8, diversity: 0.2, streak: 3, value: 0.1 }
    }
}

impl ModeThresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.plateau == 0 {
            return Err("plateau must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.diversity) {
            return Err("diversity must lie in [0, 1]".into());
        }
        if self.streak == 0 {
            return Err("streak must be at least 1".into());
        }
        if !self.value.is_finite() {
            return Err("value must be finite".into());
        }
        Ok(())
    }
}

/// What mode selection looks at.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSignals {
    pub epoch: u64,
    pub plateau: u64,
    pub mean_diversity: f64,
    /// Delta rewards of the most recent modification attempts, oldest first.
    /// Failed attempts appear with their (negative) delta.
    pub recent_deltas: Vec<f64>,
    pub top_modification_value: Option<f64>,
    pub previous: Mode,
}

pub fn select_mode(signals: &ModeSignals, thresholds: &ModeThresholds) -> Mode {
    if signals.epoch < thresholds.warmup_epochs {
        return Mode::Warmup;
    }
    if signals.plateau >= thresholds.plateau || signals.mean_diversity < thresholds.diversity {
        return Mode::Explore;
    }
    let streak = signals.recent_deltas.len() >= thresholds.streak
        && signals.recent_deltas[signals.recent_deltas.len() - thresholds.streak..]
            .iter()
            .all(|d| *d > 0.0);
    if streak && signals.top_modification_value.is_some_and(|v| v >= thresholds.value) {
        return Mode::Exploit;
    }
    match signals.previous {
        Mode::Warmup => Mode::Explore,
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub task_id: String,
    pub objective: String,
    pub constraints: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextLimits {
    /// Budget for the rendered user prompt, estimated at four characters per token.
    pub max_tokens: usize,
    pub elite_trajectories: usize,
    pub elite_modifications: usize,
    pub summaries: usize,
    pub siblings: usize,
}

impl Default for ContextLimits {
    fn default() -> Self {
        Self { max_tokens: 6000, elite_trajectories: 4, elite_modifications: 4, summaries: 3, siblings: 8 }
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalState {
    pub tree: TreeId,
    pub node: NodeId,
    pub depth: u32,
    pub code: String,
    pub reward: f64,
    pub delta_reward: f64,
    /// Node metrics except wall-clock measurements, which would make prompts
    /// machine dependent.
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiblingDigest {
    pub summary: String,
    pub delta_reward: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliteExemplar {
    pub source_tree: TreeId,
    pub steps: Vec<(String, f64)>,
    pub final_reward: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModificationDigest {
    pub key: String,
    pub mean: f64,
    pub variance: f64,
    pub count: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryDigest {
    pub text: String,
    pub frequency: usize,
    pub mean_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryView {
    Full(Vec<TrajectoryStep>),
    /// First step, number of omitted middle steps, last steps.
    Elided(TrajectoryStep, usize, Vec<TrajectoryStep>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub target: Target,
    pub state: FocalState,
    pub trajectory: TrajectoryView,
    pub siblings: Vec<SiblingDigest>,
    /// Most similar first.
    pub elite_trajectories: Vec<EliteExemplar>,
    /// Highest value first.
    pub elite_modifications: Vec<ModificationDigest>,
    pub summaries: Vec<SummaryDigest>,
    pub mode: Mode,
    pub epoch: u64,
    pub total_epochs: u64,
}

pub struct ContextSources<'a> {
    pub forest: &'a Forest,
    pub tree: TreeId,
    pub node: NodeId,
    pub pool: &'a ElitePool,
    pub summaries: &'a SummaryStore,
    pub mode: Mode,
    pub target: &'a Target,
    pub limits: &'a ContextLimits,
    pub epoch: u64,
    pub total_epochs: u64,
    pub provider: &'a dyn FeatureProvider,
}

/// Greedy max-min selection: start from the first candidate, then keep adding
/// the one farthest from everything already chosen.
fn most_dissimilar(candidates: Vec<&EliteTrajectory>, count: usize) -> Vec<&EliteTrajectory> {
    let mut rest = candidates;
    let mut chosen: Vec<&EliteTrajectory> = Vec::new();
    while chosen.len() < count && !rest.is_empty() {
        let pick = if chosen.is_empty() {
            0
        } else {
            let spread = |c: &EliteTrajectory| {
                chosen
                    .iter()
                    .map(|s| 1.0 - c.feature_vector.cosine(&s.feature_vector))
                    .fold(f64::INFINITY, f64::min)
            };
            let mut best = 0;
            for i in 1..rest.len() {
                if spread(rest[i]) > spread(rest[best]) {
                    best = i;
                }
            }
            best
        };
        chosen.push(rest.remove(pick));
    }
    chosen
}

fn exemplar(e: &EliteTrajectory, query: &FeatureVector) -> EliteExemplar {
    EliteExemplar {
        source_tree: e.source_tree,
        steps: e
            .trajectory
            .steps
            .iter()
            .map(|s| (s.modification_summary.clone(), s.delta_reward))
            .collect(),
        final_reward: e.final_reward(),
        similarity: query.cosine(&e.feature_vector),
    }
}

pub fn build_context<R: Rng + ?Sized>(src: &ContextSources<'_>, rng: &mut R) -> Result<Context, AgentError> {
    let tree = src.forest.tree(src.tree).map_err(|e| AgentError::Precondition(e.to_string()))?;
    let node = tree.node(src.node).map_err(|e| AgentError::Precondition(e.to_string()))?;
    if !node.status.is_success() {
        return Err(AgentError::Precondition(format!("focal node {} is not successful", node.id)));
    }
    let trajectory = tree.trajectory(node.id).map_err(|e| AgentError::Precondition(e.to_string()))?;
    let query = src.provider.features(&trajectory.feature_text());

    let base_traj = src.limits.elite_trajectories;
    let base_mods = src.limits.elite_modifications;
    let (n_traj, n_mods) = match src.mode {
        Mode::Warmup => (base_traj.min(1), base_mods.min(1)),
        Mode::Explore => (base_traj, base_mods),
        Mode::Exploit => ((base_traj / 2).max(base_traj.min(1)), base_mods * 2),
    };
    let drawn = match src.mode {
        Mode::Explore => most_dissimilar(src.pool.sample_trajectories(&query, 3 * n_traj, rng), n_traj),
        _ => src.pool.sample_trajectories(&query, n_traj, rng),
    };
    let mut elite_trajectories: Vec<EliteExemplar> = drawn.into_iter().map(|e| exemplar(e, &query)).collect();
    // stable order for rendering: most similar first, ties keep draw order
    elite_trajectories.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));

    let elite_modifications = src
        .pool
        .top_modifications(n_mods)
        .into_iter()
        .map(|m| ModificationDigest { key: m.key.clone(), mean: m.mean, variance: m.variance, count: m.count, value: m.value })
        .collect();

    let summaries = src
        .summaries
        .retrieve(&query, src.limits.summaries)
        .into_iter()
        .map(|s| SummaryDigest {
            text: s.text.clone(),
            frequency: s.pattern_stats.frequency,
            mean_gain: s.pattern_stats.mean_gain,
        })
        .collect();

    let mut siblings: Vec<SiblingDigest> = tree
        .siblings(node.id)
        .map_err(|e| AgentError::Precondition(e.to_string()))?
        .into_iter()
        .map(|s| SiblingDigest {
            summary: s.modification_summary.clone(),
            delta_reward: s.delta_reward,
            failure: match &s.status {
                NodeStatus::Failed { reason } => Some(reason.clone()),
                _ => None,
            },
        })
        .collect();
    if siblings.len() > src.limits.siblings {
        siblings.drain(..siblings.len() - src.limits.siblings);
    }

    Ok(Context {
        target: src.target.clone(),
        state: FocalState {
            tree: tree.id,
            node: node.id,
            depth: node.depth,
            code: node.code.clone(),
            reward: node.reward,
            delta_reward: node.delta_reward,
            metrics: node
                .metrics
                .iter()
                .filter(|(k, _)| !k.starts_with("runtime"))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        },
        trajectory: TrajectoryView::Full(trajectory.steps),
        siblings,
        elite_trajectories,
        elite_modifications,
        summaries,
        mode: src.mode,
        epoch: src.epoch,
        total_epochs: src.total_epochs,
    })
}

/// Fenced block whose fence is longer than any backtick run in `body`.
pub fn fenced(body: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for c in body.chars() {
        run = if c == '`' { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    let fence = "`".repeat((longest + 1).max(3));
    let newline = if body.ends_with('\n') { "" } else { "\n" };
    format!("{fence}\n{body}{newline}{fence}\n")
}

/// Returns the body of the first fenced code block in `text`.
pub fn extract_fenced(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().position(|l| l.trim_start().starts_with("```"))?;
    let opener = lines[start].trim_start();
    let fence_len = opener.chars().take_while(|c| *c == '`').count();
    let end = lines[start + 1..]
        .iter()
        .position(|l| {
            let t = l.trim();
            t.len() >= fence_len && t.chars().all(|c| c == '`')
        })
        .map(|i| start + 1 + i)?;
    let mut body = lines[start + 1..end].join("\n");
    body.push('\n');
    Some(body)
}

fn step_line(out: &mut String, index: usize, step: &TrajectoryStep) {
    let _ = writeln!(
        out,
        "{index}. {} | reward {:.6} | delta {:+.6}",
        step.modification_summary, step.reward, step.delta_reward
    );
}

impl Context {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## Objective");
        let _ = writeln!(out, "task: {}", self.target.task_id);
        let _ = writeln!(out, "maximize: {}", self.target.objective);
        for c in &self.target.constraints {
            let _ = writeln!(out, "constraint: {c}");
        }
        let _ = writeln!(out, "\n## Progress");
        let remaining = self.total_epochs.saturating_sub(self.epoch + 1);
        let _ = writeln!(out, "epoch {} of {} ({remaining} remaining)", self.epoch, self.total_epochs);
        let _ = writeln!(out, "mode: {}", self.mode.as_str());

        let s = &self.state;
        let _ = writeln!(out, "\n## Current state");
        let _ = writeln!(out, "tree {}, node {}, depth {}", s.tree, s.node, s.depth);
        let _ = writeln!(out, "reward {:.6} (delta {:+.6})", s.reward, s.delta_reward);
        for (k, v) in &s.metrics {
            let _ = writeln!(out, "metric {k} = {v}");
        }
        out.push_str(&fenced(&s.code));

        let _ = writeln!(out, "\n## Trajectory (root to current)");
        match &self.trajectory {
            TrajectoryView::Full(steps) => {
                for (i, step) in steps.iter().enumerate() {
                    step_line(&mut out, i, step);
                }
            }
            TrajectoryView::Elided(first, omitted, last) => {
                step_line(&mut out, 0, first);
                let _ = writeln!(out, "... {omitted} steps omitted ...");
                for (i, step) in last.iter().enumerate() {
                    step_line(&mut out, omitted + 1 + i, step);
                }
            }
        }

        if !self.siblings.is_empty() {
            let _ = writeln!(out, "\n## Sibling attempts");
            for sib in &self.siblings {
                match &sib.failure {
                    Some(reason) => {
                        let _ = writeln!(out, "- {} | failed: {reason}", sib.summary);
                    }
                    None => {
                        let _ = writeln!(out, "- {} | delta {:+.6}", sib.summary, sib.delta_reward);
                    }
                }
            }
        }
        if !self.elite_trajectories.is_empty() {
            let _ = writeln!(out, "\n## Elite trajectories");
            for e in &self.elite_trajectories {
                let path: Vec<String> = e.steps.iter().map(|(m, d)| format!("{m} ({d:+.4})")).collect();
                let _ = writeln!(out, "- {} final reward {:.6}: {}", e.source_tree, e.final_reward, path.join(" -> "));
            }
        }
        if !self.elite_modifications.is_empty() {
            let _ = writeln!(out, "\n## Elite modifications");
            for m in &self.elite_modifications {
                let _ = writeln!(
                    out,
                    "- {} | value {:.6} | mean {:+.6} | variance {:.6} | count {}",
                    m.key, m.value, m.mean, m.variance, m.count
                );
            }
        }
        if !self.summaries.is_empty() {
            let _ = writeln!(out, "\n## Distilled patterns");
            for p in &self.summaries {
                let _ = writeln!(out, "- {} (seen {}, mean gain {:+.6})", p.text, p.frequency, p.mean_gain);
            }
        }
        out
    }

    /// Drops one unit of lower-priority material. Returns false when nothing
    /// droppable is left.
    fn shed(&mut self) -> bool {
        if self.summaries.pop().is_some() || self.elite_trajectories.pop().is_some() {
            return true;
        }
        if self.elite_modifications.pop().is_some() {
            return true;
        }
        if !self.siblings.is_empty() {
            self.siblings.remove(0);
            return true;
        }
        if let TrajectoryView::Full(steps) = &self.trajectory {
            if steps.len() > 4 {
                let first = steps[0].clone();
                let last = steps[steps.len() - 3..].to_vec();
                self.trajectory = TrajectoryView::Elided(first, steps.len() - 4, last);
                return true;
            }
        }
        false
    }

    /// Renders, truncating sections in priority order until the estimate fits
    /// `max_tokens`. The objective and current state are never cut, so the
    /// result can still exceed the budget when those alone do.
    pub fn render_within(&self, max_tokens: usize) -> String {
        let mut ctx = self.clone();
        loop {
            let text = ctx.render();
            if estimate_tokens(&text) <= max_tokens || !ctx.shed() {
                return text;
            }
        }
    }
}
