//! The epoch loop: pick a tree and node, ask the policy for a step, realize
//! it, commit the result, prune, and occasionally redesign or summarize.
//!
//! All randomness comes from one ChaCha stream stored in the run state, and
//! the event log holds no wall-clock data, so a fixed config, seed and
//! deterministic backend reproduce a run byte for byte, including across a
//! checkpoint and resume.

pub mod checkpoint;
pub mod config;
pub mod runtime;
pub mod state;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::agents::{
    build_context, design, median, modify, next_step, select_mode, summarize, validate_candidate, AgentBackends,
    AgentError, AgentRole, Context, ContextSources, Mode, ModeSignals, ModifyOutcome, ModifySettings, Proposal, Target,
};
use crate::elite_pool::modification_key;
use crate::executor::{reward_from, Executor};
use crate::features::TokenFrequency;
use crate::forest::{forest_sexpr, AlgorithmNode, NodeDraft, NodeId, Outcome, TreeId, TreeOrigin};
use crate::pruning::{prune_forest, prune_hopeless, prune_low_potential};
use crate::sampling::{draw, sample_node, tree_probabilities, ForestProfile};

pub use checkpoint::{CheckpointBody, CheckpointError, CheckpointHeader, CHECKPOINT_FORMAT_VERSION};
pub use config::{
    AgentParams, BackendSpec, BackendsConfig, ConfigError, ExecutorConfig, MacroParams, RunConfig, SeedSpec,
    CONFIG_FORMAT_VERSION,
};
pub use runtime::{build_runtime, Paths, Runtime};
pub use state::{Event, RunState};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const FOREST_FILE: &str = "forest.sexpr";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("seeding failed: {0}")]
    Seed(String),
    #[error("no tree has a node left to expand")]
    Exhausted,
    #[error("run aborted in epoch {epoch}: {message}")]
    Aborted { epoch: u64, message: String },
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

fn internal(e: impl std::fmt::Display) -> RunError {
    RunError::Internal(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestCandidate {
    pub tree: TreeId,
    pub node: NodeId,
    pub reward: f64,
    pub code: String,
}

/// One expansion scheduled for this epoch.
struct Job {
    tree: TreeId,
    node: NodeId,
    context: Context,
    parent: AlgorithmNode,
}

type Attempt = Result<(Proposal, ModifyOutcome, u32), AgentError>;

pub struct Orchestrator {
    config: RunConfig,
    executor: Executor,
    backends: AgentBackends,
    provider: TokenFrequency,
    target: Target,
    state: RunState,
    output_dir: Option<PathBuf>,
}

fn target_for(config: &RunConfig, executor: &Executor) -> Result<Target, RunError> {
    let spec = executor.task(&config.task).map_err(|e| ConfigError::Invalid { field: "task".into(), message: e.to_string() })?;
    let objective = if spec.description.is_empty() { "score reported by the harness".to_string() } else { spec.description.clone() };
    Ok(Target {
        task_id: spec.id.clone(),
        objective,
        constraints: spec.constraints.iter().map(|c| c.describe()).collect(),
    })
}

impl Orchestrator {
    /// Evaluates the seeds and plants one tree per seed. With `output_dir`
    /// set, checkpoints and reports are written there.
    pub fn new(config: RunConfig, runtime: Runtime, output_dir: Option<PathBuf>) -> Result<Self, RunError> {
        config.validate()?;
        let target = target_for(&config, &runtime.executor)?;
        let mut state = RunState::new(&config);
        for (label, code) in &runtime.seeds {
            let result = validate_candidate(code, &runtime.executor, &config.task, config.limits)
                .map_err(|e| RunError::Seed(format!("{label}: {e}")))?;
            let tree = state
                .forest
                .create_tree(label, code, &result, TreeOrigin::Seed)
                .map_err(|e| RunError::Seed(e.to_string()))?;
            let root = state.forest.tree(tree).map_err(internal)?.root_id;
            let payload = match result.score() {
                Some(score) => json!({"label": label, "reward": score}),
                None => json!({"label": label, "failure": result.reason()}),
            };
            state.log("seed", Some(tree), Some(root), payload);
        }
        if state.forest.best_reward().is_none() {
            return Err(RunError::Seed("no seed evaluated successfully".into()));
        }
        state.best_reward = state.forest.best_reward();
        state.best_trace.push(state.best_reward);
        Ok(Self {
            config,
            executor: runtime.executor,
            backends: runtime.backends,
            provider: TokenFrequency,
            target,
            state,
            output_dir,
        })
    }

    /// Continues from a checkpoint. The runtime's seeds are ignored.
    pub fn resume(body: CheckpointBody, runtime: Runtime, output_dir: Option<PathBuf>) -> Result<Self, RunError> {
        let target = target_for(&body.config, &runtime.executor)?;
        if !body.backends.is_null() {
            runtime
                .backends
                .restore(&body.backends)
                .map_err(|e| CheckpointError::Format(format!("backend state: {e}")))?;
        }
        Ok(Self {
            config: body.config,
            executor: runtime.executor,
            backends: runtime.backends,
            provider: TokenFrequency,
            target,
            state: body.state,
            output_dir,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.state.total_epochs
    }

    /// Changes the total epoch budget, which agents see in their prompts.
    pub fn set_total_epochs(&mut self, total: u64) {
        self.state.total_epochs = total.max(self.state.epoch);
    }

    pub fn best(&self) -> Option<BestCandidate> {
        let (tree, node) = self.state.forest.best_in_forest().ok()?;
        let n = self.state.forest.node(tree, node).ok()?;
        Some(BestCandidate { tree, node, reward: n.reward, code: n.code.clone() })
    }

    /// Runs every remaining epoch, then writes the outputs.
    pub fn run(&mut self) -> Result<Option<BestCandidate>, RunError> {
        while !self.is_finished() {
            self.step_epoch()?;
        }
        self.write_outputs()?;
        Ok(self.best())
    }

    /// Runs up to `count` more epochs, then writes the outputs.
    pub fn run_epochs(&mut self, count: u64) -> Result<Option<BestCandidate>, RunError> {
        for _ in 0..count {
            if self.is_finished() {
                break;
            }
            self.step_epoch()?;
        }
        self.write_outputs()?;
        Ok(self.best())
    }

    /// One epoch. On a backend failure the state is rolled back to the start
    /// of the epoch, checkpointed, and the run reports `Aborted`.
    pub fn step_epoch(&mut self) -> Result<(), RunError> {
        let before = self.state.clone();
        let backends_before = self.backends.snapshot();
        match self.epoch_body() {
            Ok(()) => {
                if self.output_dir.is_some() && self.state.epoch.is_multiple_of(self.config.checkpoint_interval) {
                    self.write_outputs()?;
                }
                Ok(())
            }
            Err(RunError::Aborted { epoch, message }) => {
                self.state = before;
                // replay cursors go back too, so a resume re-issues the same requests
                let _ = self.backends.restore(&backends_before);
                self.state.log("aborted", None, None, json!({"message": message}));
                self.write_outputs()?;
                Err(RunError::Aborted { epoch, message })
            }
            Err(other) => Err(other),
        }
    }

    fn epoch_body(&mut self) -> Result<(), RunError> {
        let Self { config, executor, backends, provider, target, state, .. } = self;
        let epoch = state.epoch;
        let abort = |message: String| RunError::Aborted { epoch, message };
        state.forest.epoch = epoch;

        let mean_diversity = ForestProfile::new(&state.forest, provider).mean_diversity();
        let signals = ModeSignals {
            epoch,
            plateau: state.plateau,
            mean_diversity,
            recent_deltas: state.recent_deltas.clone(),
            top_modification_value: state.pool.top_modifications(1).first().map(|m| m.value),
            previous: state.mode,
        };
        let mode = select_mode(&signals, &config.modes);
        if mode != state.mode {
            state.log("mode", None, None, json!({"from": state.mode.as_str(), "to": mode.as_str()}));
            state.mode = mode;
        }

        let probabilities = tree_probabilities(&state.forest, &config.tree_score, &config.sampling, provider)
            .map_err(|_| RunError::Exhausted)?;
        let viable: Vec<TreeId> = probabilities.keys().copied().collect();
        let count = config.islands.min(viable.len());
        let mut trees: Vec<TreeId> = if mode == Mode::Warmup {
            let start = state.round_robin as usize;
            state.round_robin += count as u64;
            (0..count).map(|i| viable[(start + i) % viable.len()]).collect()
        } else {
            let mut remaining: Vec<(TreeId, f64)> = probabilities.into_iter().collect();
            let mut picked = Vec::with_capacity(count);
            for _ in 0..count {
                let total: f64 = remaining.iter().map(|(_, p)| p).sum();
                let p: Vec<f64> = remaining.iter().map(|(_, p)| p / total).collect();
                picked.push(remaining.remove(draw(&p, &mut state.rng)).0);
            }
            picked
        };
        trees.sort();

        let mut jobs = Vec::with_capacity(trees.len());
        for &tree in &trees {
            let node = sample_node(state.forest.tree(tree).map_err(internal)?, &config.sampling, &mut state.rng)
                .map_err(internal)?;
            let sources = ContextSources {
                forest: &state.forest,
                tree,
                node,
                pool: &state.pool,
                summaries: &state.summaries,
                mode,
                target,
                limits: &config.agents.context,
                epoch,
                total_epochs: state.total_epochs,
                provider: &*provider,
            };
            let context = build_context(&sources, &mut state.rng).map_err(internal)?;
            let parent = state.forest.node(tree, node).map_err(internal)?.clone();
            state.log("select", Some(tree), Some(node), json!({"mode": mode.as_str()}));
            jobs.push(Job { tree, node, context, parent });
        }

        let settings = ModifySettings {
            task_ref: config.task.clone(),
            limits: config.limits,
            max_debug_retries: config.agents.debug_retries,
            temperature: config.agents.temperature,
            epoch,
            total_epochs: state.total_epochs,
        };
        let agents = &config.agents;
        let backends = &*backends;
        let executor = &*executor;
        let attempt = |job: &Job| -> Attempt {
            let (proposal, asks) = next_step(
                &job.context,
                backends.get(AgentRole::NextStepper),
                agents.context.max_tokens,
                agents.reasks,
                agents.temperature,
            )?;
            let outcome = modify(&proposal, &job.parent, backends.get(AgentRole::Modify), executor, &settings)?;
            Ok((proposal, outcome, asks))
        };
        let results: Vec<Attempt> = if jobs.len() == 1 {
            vec![attempt(&jobs[0])]
        } else {
            let attempt = &attempt;
            std::thread::scope(|s| {
                let handles: Vec<_> = jobs.iter().map(|job| s.spawn(move || attempt(job))).collect();
                handles.into_iter().map(|h| h.join().expect("island thread panicked")).collect()
            })
        };

        for (job, result) in jobs.iter().zip(results) {
            match result {
                Ok((proposal, outcome, asks)) => commit(state, config, provider, job, proposal, outcome, asks)?,
                Err(AgentError::Format { attempts, message }) => state.log(
                    "format_error",
                    Some(job.tree),
                    Some(job.node),
                    json!({"attempts": attempts, "message": message}),
                ),
                Err(AgentError::Precondition(message)) => {
                    state.log("agent_error", Some(job.tree), Some(job.node), json!({"message": message}))
                }
                Err(e @ (AgentError::Backend(_) | AgentError::Exec(_))) => return Err(abort(e.to_string())),
            }
        }

        for &tree in &trees {
            let hopeless = prune_hopeless(&mut state.forest, tree).map_err(internal)?;
            if !hopeless.is_empty() {
                state.log("prune_hopeless", Some(tree), None, json!({"subtrees": hopeless}));
            }
            let low = prune_low_potential(&mut state.forest, tree, &config.low_potential).map_err(internal)?;
            if !low.is_empty() {
                state.log("prune_low_potential", Some(tree), None, json!({"nodes": low}));
            }
        }

        let mean_diversity = ForestProfile::new(&state.forest, provider).mean_diversity();
        let m = &config.macro_loop;
        let cooled = state.last_redesign.is_none_or(|last| epoch - last >= m.cooldown);
        if epoch >= config.modes.warmup_epochs
            && cooled
            && !state.pool.is_empty()
            && (state.plateau >= m.plateau || mean_diversity < m.diversity)
        {
            redesign(state, config, backends, executor, epoch)?;
        }
        let removed = prune_forest(&mut state.forest, &config.retention, config.tree_score.window);
        if !removed.is_empty() {
            state.log("prune_forest", None, None, json!({"removed": removed}));
        }

        if (epoch + 1) % m.summarize_interval == 0 {
            let fresh: Vec<_> = state
                .pool
                .trajectories()
                .iter()
                .filter(|t| !state.summarized.contains(&t.terminal()))
                .map(|t| (t.terminal(), t.trajectory.clone()))
                .collect();
            if !fresh.is_empty() {
                let trajectories: Vec<_> = fresh.iter().map(|(_, t)| t.clone()).collect();
                let backend = backends.get(AgentRole::Summarizer);
                match summarize(&trajectories, backend, &*provider, agents.temperature, epoch) {
                    Ok(summary) => {
                        let payload = json!({
                            "text": summary.text,
                            "frequency": summary.pattern_stats.frequency,
                            "mean_gain": summary.pattern_stats.mean_gain,
                        });
                        let admitted = state.summaries.insert(summary);
                        state.summarized.extend(fresh.iter().map(|(k, _)| *k));
                        let kind = if admitted { "summary" } else { "summary_duplicate" };
                        state.log(kind, None, None, payload);
                    }
                    // the store is left as it was; the trajectories get another chance next cycle
                    Err(e) => state.log("summary_failed", None, None, json!({"message": e.to_string()})),
                }
            }
        }

        let best = state.forest.best_reward();
        let improved = match (best, state.best_reward) {
            (Some(b), Some(prev)) => b > prev,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            state.best_reward = best;
            state.plateau = 0;
        } else {
            state.plateau += 1;
        }
        state.best_trace.push(best);
        let trees_now = state.forest.len();
        let plateau = state.plateau;
        state.log("epoch_end", None, None, json!({"best": best, "mode": mode.as_str(), "trees": trees_now, "plateau": plateau}));
        state.epoch = epoch + 1;
        Ok(())
    }

    /// Checkpoint contents for the current state, after compacting stale
    /// tombstones.
    pub fn checkpoint_body(&mut self) -> CheckpointBody {
        self.state.forest.compact(self.config.tombstone_horizon);
        CheckpointBody::new(self.config.clone(), self.state.clone(), self.backends.snapshot())
    }

    /// Writes checkpoint, event log, forest dump and reward trace to the
    /// output directory, if there is one.
    pub fn write_outputs(&mut self) -> Result<(), RunError> {
        let Some(dir) = self.output_dir.clone() else {
            return Ok(());
        };
        let body = self.checkpoint_body();
        checkpoint::write(&dir.join(CHECKPOINT_FILE), &body)?;
        let files = [
            (EVENTS_FILE, self.state.events_jsonl()),
            (FOREST_FILE, forest_sexpr(&self.state.forest, false)),
            (REPORT_FILE, report_csv(&self.state)),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            checkpoint::write_atomic(&path, text.as_bytes()).map_err(|source| RunError::Io { path, source })?;
        }
        Ok(())
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.output_dir.as_deref()
    }
}

fn commit(
    state: &mut RunState,
    config: &RunConfig,
    provider: &TokenFrequency,
    job: &Job,
    proposal: Proposal,
    outcome: ModifyOutcome,
    asks: u32,
) -> Result<(), RunError> {
    let epoch = state.epoch;
    let (reward, delta) = reward_from(&outcome.result, job.parent.reward, config.failure_sentinel);
    let mut draft = NodeDraft::from_eval(outcome.code, proposal.high_level.clone(), proposal.detailed_spec, &outcome.result);
    draft.metrics.insert("debug_attempts".into(), f64::from(outcome.debug_attempts));
    draft.metrics.insert("edit_distance".into(), outcome.edit_distance);
    draft.metrics.insert("proposal_attempts".into(), f64::from(asks));
    let accepted = outcome.result.is_success() && config.gate.admits(reward, delta);
    if outcome.result.is_success() && !accepted {
        draft.metrics.insert("score".into(), reward);
        draft.outcome = Outcome::Failed(format!("no improvement: score {reward:.6}, delta {delta:+.6}"));
    }
    let child = state.forest.add_child(job.tree, job.node, draft).map_err(internal)?;
    let node = state.forest.node(job.tree, child).map_err(internal)?.clone();
    if accepted {
        state.pool.record_modification(&modification_key(&proposal.high_level), delta).map_err(internal)?;
        let trajectory = state.forest.trajectory(job.tree, child).map_err(internal)?;
        let admitted = state.pool.maybe_admit_trajectory(trajectory, &node, epoch, provider).map_err(internal)?;
        state.log(
            "child",
            Some(job.tree),
            Some(child),
            json!({"parent": job.node, "reward": reward, "delta": delta, "summary": proposal.high_level,
                   "debug_attempts": outcome.debug_attempts, "elite": admitted}),
        );
    } else {
        state.log(
            "failed_child",
            Some(job.tree),
            Some(child),
            json!({"parent": job.node, "reason": node.status.reason(), "summary": proposal.high_level,
                   "debug_attempts": outcome.debug_attempts, "failures": outcome.failures}),
        );
    }
    // failed attempts count with their observed delta when there is one
    let observed = if outcome.result.is_success() { delta } else { config.failure_sentinel };
    state.push_delta(observed);
    Ok(())
}

fn redesign(
    state: &mut RunState,
    config: &RunConfig,
    backends: &AgentBackends,
    executor: &Executor,
    epoch: u64,
) -> Result<(), RunError> {
    let abort = |message: String| RunError::Aborted { epoch, message };
    state.last_redesign = Some(epoch);
    let agents = &config.agents;
    let code = match design(
        &state.pool,
        backends.get(AgentRole::Designer),
        agents.designer_exemplars,
        agents.reasks,
        agents.temperature,
        epoch,
        state.total_epochs,
        &mut state.rng,
    ) {
        Ok(code) => code,
        Err(e @ AgentError::Backend(_)) => return Err(abort(e.to_string())),
        Err(e) => {
            state.log("redesign_failed", None, None, json!({"message": e.to_string()}));
            return Ok(());
        }
    };
    let result = validate_candidate(&code, executor, &config.task, config.limits).map_err(|e| abort(e.to_string()))?;
    let roots: Vec<f64> = state
        .forest
        .trees
        .values()
        .map(|t| t.root())
        .filter(|r| r.status.is_success())
        .map(|r| r.reward)
        .collect();
    let bar = median(&roots);
    match result.score() {
        Some(score) if bar.is_none_or(|b| score > b) => {
            let label = format!("redesign-e{epoch}");
            let tree = state.forest.create_tree(&label, &code, &result, TreeOrigin::Redesign).map_err(internal)?;
            let root = state.forest.tree(tree).map_err(internal)?.root_id;
            state.log("redesign", Some(tree), Some(root), json!({"reward": score, "median_root": bar}));
        }
        Some(score) => state.log("redesign_rejected", None, None, json!({"reward": score, "median_root": bar})),
        None => state.log("redesign_rejected", None, None, json!({"failure": result.reason(), "median_root": bar})),
    }
    Ok(())
}

/// Forest best after seeding (row 0) and after each completed epoch.
pub fn report_csv(state: &RunState) -> String {
    let mut out = String::from("epochs_completed,best_reward\n");
    for (i, best) in state.best_trace.iter().enumerate() {
        match best {
            Some(b) => {
                let _ = writeln!(out, "{i},{b}");
            }
            None => {
                let _ = writeln!(out, "{i},");
            }
        }
    }
    out
}

/// Human-readable run summary: best node per tree and the top elite
/// modifications.
pub fn report_text(state: &RunState, top: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "epochs completed: {} of {}", state.epoch, state.total_epochs);
    match state.best_reward {
        Some(b) => {
            let _ = writeln!(out, "best reward: {b}");
        }
        None => {
            let _ = writeln!(out, "best reward: none");
        }
    }
    let _ = writeln!(out, "\ntree\tlabel\tnodes\tbest_node\tbest_reward");
    for tree in state.forest.trees.values() {
        let live = tree.nodes.values().filter(|n| !n.status.is_pruned()).count();
        match tree.best_node() {
            Ok(id) => {
                let _ = writeln!(out, "{}\t{}\t{live}\t{id}\t{}", tree.id, tree.meta.label, tree.nodes[&id].reward);
            }
            Err(_) => {
                let _ = writeln!(out, "{}\t{}\t{live}\t-\t-", tree.id, tree.meta.label);
            }
        }
    }
    let _ = writeln!(out, "\nvalue\tmean\tcount\tmodification");
    for m in state.pool.top_modifications(top) {
        let _ = writeln!(out, "{:.6}\t{:+.6}\t{}\t{}", m.value, m.mean, m.count, m.key);
    }
    out
}
