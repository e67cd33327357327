//! Everything a run needs to continue exactly where it stopped.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::RunConfig;
use crate::agents::{Mode, SummaryStore};
use crate::elite_pool::ElitePool;
use crate::forest::{Forest, NodeId, TreeId};

/// How many recent attempt deltas mode selection can look back on.
pub const DELTA_HISTORY: usize = 64;

/// One line of the event log. Deliberately free of wall-clock data so that
/// identical runs produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub epoch: u64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub forest: Forest,
    pub pool: ElitePool,
    pub summaries: SummaryStore,
    /// Next epoch to run.
    pub epoch: u64,
    pub total_epochs: u64,
    pub mode: Mode,
    /// Epochs since the forest best last improved.
    pub plateau: u64,
    pub best_reward: Option<f64>,
    pub recent_deltas: Vec<f64>,
    pub last_redesign: Option<u64>,
    /// Elite terminals already folded into a summary.
    pub summarized: Vec<(TreeId, NodeId)>,
    pub round_robin: u64,
    /// Forest best after seeding, then after every epoch.
    pub best_trace: Vec<Option<f64>>,
    pub events: Vec<Event>,
    pub rng: ChaCha8Rng,
}

impl RunState {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            forest: Forest::with_sentinel(config.forest_capacity, config.failure_sentinel),
            pool: ElitePool::new(config.elite_k),
            summaries: SummaryStore::new(config.summary_cap),
            epoch: 0,
            total_epochs: config.epochs,
            mode: Mode::Warmup,
            plateau: 0,
            best_reward: None,
            recent_deltas: Vec::new(),
            last_redesign: None,
            summarized: Vec::new(),
            round_robin: 0,
            best_trace: Vec::new(),
            events: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }

    pub fn log(&mut self, kind: &str, tree: Option<TreeId>, node: Option<NodeId>, payload: Value) {
        self.events.push(Event { epoch: self.epoch, kind: kind.to_string(), tree, node, payload });
    }

    pub fn push_delta(&mut self, delta: f64) {
        self.recent_deltas.push(delta);
        if self.recent_deltas.len() > DELTA_HISTORY {
            self.recent_deltas.remove(0);
        }
    }

    /// Event log as JSON lines.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rng_state_round_trips_through_json() {
        let config = RunConfig::from_json(
            r#"{"seed": 3, "epochs": 2, "task": "quadratic-1d", "seeds": [{"label": "a"}],
                "backends": {"default": {"kind": "hill_climber"}}}"#,
        )
        .unwrap();
        let mut state = RunState::new(&config);
        let _: u64 = state.rng.gen();
        let restored: RunState = serde_json::from_str(&serde_json::to_string(&state).unwrap()).unwrap();
        let mut a = state.rng.clone();
        let mut b = restored.rng.clone();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        assert_eq!(restored, state);
        state.push_delta(1.0);
        assert_eq!(state.recent_deltas, vec![1.0]);
    }

    #[test]
    fn events_omit_empty_fields() {
        let e = Event { epoch: 1, kind: "x".into(), tree: None, node: None, payload: Value::Null };
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"epoch":1,"kind":"x"}"#);
    }
}
