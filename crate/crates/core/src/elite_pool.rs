//! Cross-lineage memory: the top-k trajectories seen anywhere in the forest,
//! plus running gain statistics for every modification that was applied.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureProvider, FeatureVector};
use crate::forest::{AlgorithmNode, NodeId, Trajectory, TreeId};

/// Similarity floor so that zero-overlap trajectories stay drawable.
pub const SIMILARITY_FLOOR: f64 = 1e-6;
pub const DEFAULT_ELITE_K: usize = 16;
const MAX_KEY_CHARS: usize = 120;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("modification key is empty")]
    EmptyKey,
    #[error("trajectory ends at a non-successful node: {0}")]
    NotSuccessful(String),
}

/// Normalized identity of a modification: the lowercased, whitespace-collapsed
/// first sentence of its summary, cut to 120 characters.
pub fn modification_key(summary: &str) -> String {
    let collapsed = summary.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut first = String::new();
    let mut chars = collapsed.chars().peekable();
    while let Some(c) = chars.next() {
        first.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| *n == ' ') {
            break;
        }
    }
    let trimmed = first.trim_end_matches(['.', '!', '?']).trim();
    trimmed.to_lowercase().chars().take(MAX_KEY_CHARS).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Effectiveness scaled by a confidence factor in (0.5, 1):
/// `mean * (0.5 + 0.5 * sigmoid(ln(1 + n) - variance))`.
pub fn modification_value(mean: f64, variance: f64, count: u64) -> f64 {
    mean * (0.5 + 0.5 * sigmoid(-variance + (1.0 + count as f64).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteModificationStats {
    pub key: String,
    pub mean: f64,
    /// Population variance of observed deltas.
    pub variance: f64,
    pub count: u64,
    pub value: f64,
    m2: f64,
}

impl EliteModificationStats {
    fn new(key: String) -> Self {
        Self {
            key,
            mean: 0.0,
            variance: 0.0,
            count: 0,
            value: 0.0,
            m2: 0.0,
        }
    }

    /// Welford update.
    fn observe(&mut self, delta: f64) {
        self.count += 1;
        let d = delta - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (delta - self.mean);
        self.variance = (self.m2 / self.count as f64).max(0.0);
        self.value = modification_value(self.mean, self.variance, self.count);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliteTrajectory {
    pub trajectory: Trajectory,
    pub source_tree: TreeId,
    pub admitted_epoch: u64,
    pub feature_vector: FeatureVector,
    /// Artifact of the terminal node, kept so redesigns can start from it even
    /// after its tree has left the forest.
    pub final_code: String,
    admission_seq: u64,
}

impl EliteTrajectory {
    pub fn final_reward(&self) -> f64 {
        self.trajectory.final_reward
    }

    pub fn terminal(&self) -> (TreeId, NodeId) {
        (self.source_tree, self.trajectory.last_node())
    }
}

fn rank(a: &EliteTrajectory, b: &EliteTrajectory) -> Ordering {
    b.final_reward()
        .total_cmp(&a.final_reward())
        .then(a.admission_seq.cmp(&b.admission_seq))
}

fn modification_order(a: &EliteModificationStats, b: &EliteModificationStats) -> Ordering {
    b.value
        .total_cmp(&a.value)
        .then(b.count.cmp(&a.count))
        .then(a.key.cmp(&b.key))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElitePool {
    capacity: usize,
    /// Sorted best-first.
    trajectories: Vec<EliteTrajectory>,
    modifications: BTreeMap<String, EliteModificationStats>,
    modification_cap: Option<usize>,
    next_seq: u64,
}

impl ElitePool {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "elite pool capacity must be positive");
        Self {
            capacity,
            trajectories: Vec::new(),
            modifications: BTreeMap::new(),
            modification_cap: None,
            next_seq: 0,
        }
    }

    pub fn with_modification_cap(mut self, cap: Option<usize>) -> Self {
        self.modification_cap = cap;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Trajectories best-first.
    pub fn trajectories(&self) -> &[EliteTrajectory] {
        &self.trajectories
    }

    pub fn best(&self) -> Option<&EliteTrajectory> {
        self.trajectories.first()
    }

    pub fn modification(&self, key: &str) -> Option<&EliteModificationStats> {
        self.modifications.get(key)
    }

    pub fn modification_count(&self) -> usize {
        self.modifications.len()
    }

    pub fn record_modification(&mut self, key: &str, delta_reward: f64) -> Result<&EliteModificationStats, PoolError> {
        if key.trim().is_empty() {
            return Err(PoolError::EmptyKey);
        }
        self.modifications
            .entry(key.to_string())
            .or_insert_with(|| EliteModificationStats::new(key.to_string()))
            .observe(delta_reward);
        if let Some(cap) = self.modification_cap {
            while self.modifications.len() > cap {
                let worst = self
                    .modifications
                    .values()
                    .filter(|s| s.key != key)
                    .max_by(|a, b| modification_order(a, b))
                    .map(|s| s.key.clone());
                match worst {
                    Some(k) => self.modifications.remove(&k),
                    None => break,
                };
            }
        }
        Ok(&self.modifications[key])
    }

    /// Admits the trajectory if it beats the current k-th best or the pool has
    /// room. Returns whether it was admitted.
    pub fn maybe_admit_trajectory(
        &mut self,
        trajectory: Trajectory,
        terminal: &AlgorithmNode,
        epoch: u64,
        provider: &dyn FeatureProvider,
    ) -> Result<bool, PoolError> {
        if !terminal.status.is_success() {
            let reason = terminal.status.reason().unwrap_or("unknown").to_string();
            return Err(PoolError::NotSuccessful(reason));
        }
        let features = provider.features(&trajectory.feature_text());
        Ok(self.admit_with_features(trajectory, terminal.code.clone(), epoch, features))
    }

    fn admit_with_features(
        &mut self,
        trajectory: Trajectory,
        final_code: String,
        epoch: u64,
        feature_vector: FeatureVector,
    ) -> bool {
        let identity = (trajectory.tree_id, trajectory.last_node());
        if self.trajectories.iter().any(|e| e.terminal() == identity) {
            return false;
        }
        if self.trajectories.len() >= self.capacity {
            let floor = self.trajectories.last().expect("full pool").final_reward();
            if trajectory.final_reward <= floor {
                return false;
            }
            self.trajectories.pop();
        }
        let entry = EliteTrajectory {
            source_tree: trajectory.tree_id,
            trajectory,
            admitted_epoch: epoch,
            feature_vector,
            final_code,
            admission_seq: self.next_seq,
        };
        self.next_seq += 1;
        let at = self
            .trajectories
            .partition_point(|e| rank(e, &entry) != Ordering::Greater);
        self.trajectories.insert(at, entry);
        true
    }

    /// Draws up to `count` trajectories without replacement, each draw
    /// proportional to `max(cosine(query, features), floor)`.
    pub fn sample_trajectories<R: Rng + ?Sized>(
        &self,
        query: &FeatureVector,
        count: usize,
        rng: &mut R,
    ) -> Vec<&EliteTrajectory> {
        let mut candidates: Vec<(&EliteTrajectory, f64)> = self
            .trajectories
            .iter()
            .map(|e| (e, query.cosine(&e.feature_vector).max(SIMILARITY_FLOOR)))
            .collect();
        let mut picked = Vec::with_capacity(count.min(candidates.len()));
        while picked.len() < count && !candidates.is_empty() {
            let total: f64 = candidates.iter().map(|(_, w)| w).sum();
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = candidates.len() - 1;
            for (i, (_, w)) in candidates.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            picked.push(candidates.remove(chosen).0);
        }
        picked
    }

    /// Highest-value modifications first; ties by larger count, then key.
    pub fn top_modifications(&self, count: usize) -> Vec<&EliteModificationStats> {
        let mut all: Vec<_> = self.modifications.values().collect();
        all.sort_by(|a, b| modification_order(a, b));
        all.truncate(count);
        all
    }

    /// Trees that contributed at least one elite trajectory.
    pub fn source_trees(&self) -> Vec<TreeId> {
        let mut trees: Vec<_> = self.trajectories.iter().map(|e| e.source_tree).collect();
        trees.sort();
        trees.dedup();
        trees
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TokenFrequency;
    use crate::forest::{NodeStatus, TrajectoryStep};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(tree: u64, node: u64, reward: f64, summary: &str) -> Trajectory {
        Trajectory {
            tree_id: TreeId(tree),
            steps: vec![TrajectoryStep {
                node_id: NodeId(node),
                modification_summary: summary.to_string(),
                delta_reward: 0.0,
                reward,
            }],
            final_reward: reward,
        }
    }

    fn terminal(status: NodeStatus) -> AlgorithmNode {
        AlgorithmNode {
            id: NodeId(0),
            parent_id: None,
            code: "code".into(),
            modification_summary: "seed".into(),
            modification_key: "seed".into(),
            detailed_spec: String::new(),
            reward: 1.0,
            delta_reward: 0.0,
            metrics: BTreeMap::new(),
            status,
            depth: 0,
            constraint_ok: true,
            created_at: 0,
            retained: false,
            pruned_at: None,
        }
    }

    fn admit(pool: &mut ElitePool, node: u64, reward: f64) -> bool {
        pool.maybe_admit_trajectory(traj(0, node, reward, "x"), &terminal(NodeStatus::Success), 0, &TokenFrequency)
            .unwrap()
    }

    #[test]
    fn key_normalization() {
        assert_eq!(modification_key("  Unroll   the Loop. Then tile."), "unroll the loop");
        assert_eq!(modification_key("Use v1.2 API"), "use v1.2 api");
        assert_eq!(modification_key(&"a".repeat(300)).len(), 120);
        assert_eq!(modification_key("   "), "");
    }

    #[test]
    fn value_matches_reference_points() {
        assert_eq!(modification_value(1.0, 0.0, 0), 0.75);
        assert_eq!(modification_value(0.0, 3.0, 7), 0.0);
        // 0.5 * (0.5 + 0.5 * sigmoid(ln 6 - 0.2)) evaluated independently
        let x: f64 = 6f64.ln() - 0.2;
        let expected = 0.5 * (0.5 + 0.5 / (1.0 + (-x).exp()));
        assert!((modification_value(0.5, 0.2, 5) - expected).abs() < 1e-15);
        assert!((expected - 0.457_715_876_019_379_13).abs() < 1e-12);
    }

    #[test]
    fn single_and_pair_observations() {
        let mut pool = ElitePool::new(4);
        let s = pool.record_modification("tile", 0.4).unwrap();
        assert_eq!((s.mean, s.variance, s.count), (0.4, 0.0, 1));
        let mut pool = ElitePool::new(4);
        pool.record_modification("tile", 0.2).unwrap();
        let s = pool.record_modification("tile", 0.6).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!((s.variance - 0.04).abs() < 1e-15);
        assert_eq!(s.count, 2);
        assert_eq!(s.value, modification_value(s.mean, s.variance, 2));
        assert_eq!(pool.record_modification(" ", 1.0), Err(PoolError::EmptyKey));
    }

    #[test]
    fn modification_cap_evicts_lowest_value() {
        let mut pool = ElitePool::new(4).with_modification_cap(Some(2));
        pool.record_modification("a", 1.0).unwrap();
        pool.record_modification("b", 0.1).unwrap();
        pool.record_modification("c", 0.5).unwrap();
        assert_eq!(pool.modification_count(), 2);
        assert!(pool.modification("b").is_none());
    }

    #[test]
    fn admission_order_statistics() {
        let mut pool = ElitePool::new(2);
        assert!(admit(&mut pool, 1, 1.0));
        assert!(admit(&mut pool, 2, 2.0));
        assert!(admit(&mut pool, 3, 1.5));
        let rewards: Vec<f64> = pool.trajectories().iter().map(|e| e.final_reward()).collect();
        assert_eq!(rewards, vec![2.0, 1.5]);
        assert!(!admit(&mut pool, 4, 0.9));
        assert!(!admit(&mut pool, 5, 1.5), "ties with the floor do not evict");
        assert!(!admit(&mut pool, 3, 5.0), "same terminal node is not admitted twice");
    }

    #[test]
    fn failed_terminal_is_rejected() {
        let mut pool = ElitePool::new(2);
        let err = pool
            .maybe_admit_trajectory(
                traj(0, 1, 1.0, "x"),
                &terminal(NodeStatus::Failed { reason: "timeout".into() }),
                0,
                &TokenFrequency,
            )
            .unwrap_err();
        assert_eq!(err, PoolError::NotSuccessful("timeout".into()));
        assert!(pool.is_empty());
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = ElitePool::new(4);
        assert!(pool.sample_trajectories(&FeatureVector::default(), 3, &mut rng).is_empty());
        let mut pool = ElitePool::new(4);
        admit(&mut pool, 1, 1.0);
        let query = TokenFrequency.features("something unrelated");
        let got = pool.sample_trajectories(&query, 3, &mut rng);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].trajectory.last_node(), NodeId(1));
    }

    #[test]
    fn sampling_frequencies_follow_cosine_ratio() {
        let mut pool = ElitePool::new(4);
        let query = FeatureVector::from_weights(BTreeMap::from([("q".to_string(), 1.0)]));
        let near = FeatureVector::from_weights(BTreeMap::from([
            ("q".to_string(), 0.9),
            ("a".to_string(), (1.0f64 - 0.81).sqrt()),
        ]));
        let far = FeatureVector::from_weights(BTreeMap::from([
            ("q".to_string(), 0.1),
            ("b".to_string(), (1.0f64 - 0.01).sqrt()),
        ]));
        assert!((query.cosine(&near) - 0.9).abs() < 1e-12);
        assert!((query.cosine(&far) - 0.1).abs() < 1e-12);
        pool.admit_with_features(traj(0, 1, 1.0, "near"), String::new(), 0, near);
        pool.admit_with_features(traj(1, 2, 2.0, "far"), String::new(), 0, far);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        let near_hits = (0..draws)
            .filter(|_| pool.sample_trajectories(&query, 1, &mut rng)[0].trajectory.last_node() == NodeId(1))
            .count();
        let freq = near_hits as f64 / draws as f64;
        assert!((freq - 0.9).abs() <= 0.02, "near frequency {freq}");
    }

    #[test]
    fn top_modifications_ordering() {
        let mut pool = ElitePool::new(4);
        assert!(pool.top_modifications(5).is_empty());
        pool.record_modification("weak", 0.1 / 0.75).unwrap();
        pool.record_modification("strong", 1.0).unwrap();
        let top = pool.top_modifications(5);
        assert_eq!(top[0].key, "strong");
        assert_eq!(top[1].key, "weak");
    }
}
