//! Boltzmann selection of the next tree and parent node to expand.
//!
//! Node logits combine absolute reward, the node's own improvement and a depth
//! bonus `1 / (depth + 1)`; tree scores combine best reward, recent improvement
//! trend and textual distinctness from the other trees. Both are turned into
//! probabilities with a temperature softmax.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureProvider, FeatureVector};
use crate::forest::{Forest, NodeId, PhyloTree, TreeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("tree {0} has no sampleable node")]
    NoSampleableNode(TreeId),
    #[error("no tree in the forest has a sampleable node")]
    NoViableTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.5, gamma: 0.25, temperature: 1.0 }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err("temperature must be positive and finite".into());
        }
        if ![self.alpha, self.beta, self.gamma].iter().all(|w| w.is_finite()) {
            return Err("alpha, beta and gamma must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeScoreWeights {
    pub performance: f64,
    pub potential: f64,
    pub diversity: f64,
    /// Number of most recent successful additions averaged by the potential term.
    pub window: usize,
}

impl Default for TreeScoreWeights {
    fn default() -> Self {
        Self { performance: 0.5, potential: 0.3, diversity: 0.2, window: 5 }
    }
}

impl TreeScoreWeights {
    pub fn validate(&self) -> Result<(), String> {
        if ![self.performance, self.potential, self.diversity].iter().all(|w| w.is_finite()) {
            return Err("tree score weights must be finite".into());
        }
        if self.window == 0 {
            return Err("window must be at least 1".into());
        }
        Ok(())
    }
}

/// Temperature softmax with max subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

pub(crate) fn draw<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let mut target = rng.gen::<f64>();
    for (i, p) in probabilities.iter().enumerate() {
        if target < *p {
            return i;
        }
        target -= p;
    }
    // rounding left a sliver of mass past the end; give it to the last positive entry
    probabilities.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn node_logit(reward: f64, delta_reward: f64, depth: u32, params: &SamplingParams) -> f64 {
    params.alpha * reward + params.beta * delta_reward + params.gamma / (depth as f64 + 1.0)
}

/// Expansion probabilities over the tree's successful, non-tombstoned nodes.
pub fn node_probabilities(tree: &PhyloTree, params: &SamplingParams) -> Result<BTreeMap<NodeId, f64>, SamplingError> {
    let candidates: Vec<_> = tree.nodes.values().filter(|n| n.is_sampleable()).collect();
    if candidates.is_empty() {
        return Err(SamplingError::NoSampleableNode(tree.id));
    }
    let logits: Vec<f64> = candidates
        .iter()
        .map(|n| node_logit(n.reward, n.delta_reward, n.depth, params))
        .collect();
    let probs = softmax(&logits, params.temperature);
    Ok(candidates.iter().map(|n| n.id).zip(probs).collect())
}

pub fn sample_node<R: Rng + ?Sized>(tree: &PhyloTree, params: &SamplingParams, rng: &mut R) -> Result<NodeId, SamplingError> {
    let probs = node_probabilities(tree, params)?;
    let (ids, p): (Vec<NodeId>, Vec<f64>) = probs.into_iter().unzip();
    Ok(ids[draw(&p, rng)])
}

/// Text describing a tree for similarity purposes: the summaries and code of
/// its successful nodes.
pub fn tree_features(tree: &PhyloTree, provider: &dyn FeatureProvider) -> FeatureVector {
    let text = tree
        .success_nodes()
        .flat_map(|n| [n.modification_summary.as_str(), n.code.as_str()])
        .collect::<Vec<_>>()
        .join("\n");
    provider.features(&text)
}

/// Mean delta over the last `window` successful non-root additions, 0 if none.
pub fn potential(tree: &PhyloTree, window: usize) -> f64 {
    let mut recent: Vec<_> = tree
        .success_nodes()
        .filter(|n| n.parent_id.is_some())
        .collect();
    recent.sort_by_key(|n| (n.created_at, n.id));
    let tail = &recent[recent.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|n| n.delta_reward).sum::<f64>() / tail.len() as f64
}

/// Per-tree quantities shared by tree scoring, retention and mode selection.
#[derive(Debug, Clone)]
pub struct ForestProfile {
    pub features: BTreeMap<TreeId, FeatureVector>,
}

impl ForestProfile {
    pub fn new(forest: &Forest, provider: &dyn FeatureProvider) -> Self {
        Self {
            features: forest
                .trees
                .iter()
                .map(|(id, t)| (*id, tree_features(t, provider)))
                .collect(),
        }
    }

    /// 1 minus the highest cosine similarity to any other tree; 1 for a lone tree.
    pub fn diversity(&self, tree: TreeId) -> f64 {
        let Some(mine) = self.features.get(&tree) else {
            return 1.0;
        };
        let closest = self
            .features
            .iter()
            .filter(|(id, _)| **id != tree)
            .map(|(_, other)| mine.cosine(other))
            .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))));
        closest.map_or(1.0, |c| 1.0 - c)
    }

    pub fn mean_diversity(&self) -> f64 {
        if self.features.is_empty() {
            return 1.0;
        }
        self.features.keys().map(|t| self.diversity(*t)).sum::<f64>() / self.features.len() as f64
    }
}

pub fn tree_score_with(tree: &PhyloTree, profile: &ForestProfile, weights: &TreeScoreWeights, sentinel: f64) -> f64 {
    let perf = tree.best_reward().unwrap_or(sentinel);
    weights.performance * perf
        + weights.potential * potential(tree, weights.window)
        + weights.diversity * profile.diversity(tree.id)
}

pub fn tree_score(tree: &PhyloTree, forest: &Forest, weights: &TreeScoreWeights, provider: &dyn FeatureProvider) -> f64 {
    let profile = ForestProfile::new(forest, provider);
    tree_score_with(tree, &profile, weights, forest.failure_sentinel)
}

/// Softmax over tree scores at the node temperature, restricted to trees that
/// still have something to expand.
pub fn tree_probabilities(
    forest: &Forest,
    weights: &TreeScoreWeights,
    params: &SamplingParams,
    provider: &dyn FeatureProvider,
) -> Result<BTreeMap<TreeId, f64>, SamplingError> {
    let profile = ForestProfile::new(forest, provider);
    let viable: Vec<_> = forest
        .trees
        .values()
        .filter(|t| t.nodes.values().any(|n| n.is_sampleable()))
        .collect();
    if viable.is_empty() {
        return Err(SamplingError::NoViableTree);
    }
    let scores: Vec<f64> = viable
        .iter()
        .map(|t| tree_score_with(t, &profile, weights, forest.failure_sentinel))
        .collect();
    let probs = softmax(&scores, params.temperature);
    Ok(viable.iter().map(|t| t.id).zip(probs).collect())
}

pub fn sample_tree<R: Rng + ?Sized>(
    forest: &Forest,
    weights: &TreeScoreWeights,
    params: &SamplingParams,
    provider: &dyn FeatureProvider,
    rng: &mut R,
) -> Result<TreeId, SamplingError> {
    let probs = tree_probabilities(forest, weights, params, provider)?;
    let (ids, p): (Vec<TreeId>, Vec<f64>) = probs.into_iter().unzip();
    Ok(ids[draw(&p, rng)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::EvalResult;
    use crate::features::TokenFrequency;
    use crate::forest::{NodeDraft, TreeOrigin};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ok(score: f64) -> EvalResult {
        EvalResult::success(score, 0.0)
    }

    fn unit() -> SamplingParams {
        SamplingParams { alpha: 1.0, beta: 1.0, gamma: 1.0, temperature: 1.0 }
    }

    /// root r=1.0; a r=2.0 (Δ=1.0, d=1); b r=1.5 (Δ=-0.5, d=2) under a.
    fn three_nodes() -> (Forest, TreeId) {
        let mut f = Forest::new(4);
        let t = f.create_tree("s", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let a = f.add_child(t, NodeId(0), NodeDraft::from_eval("a", "a", "", &ok(2.0))).unwrap();
        f.add_child(t, a, NodeDraft::from_eval("b", "b", "", &ok(1.5))).unwrap();
        (f, t)
    }

    #[test]
    fn three_node_probabilities_match_hand_softmax() {
        let (f, t) = three_nodes();
        let p = node_probabilities(f.tree(t).unwrap(), &unit()).unwrap();
        // exp of (2, 3.5, 1.3333) normalized, evaluated outside this crate
        let expected = [0.1668027168180946, 0.74755791286635, 0.0856393703155554];
        for (got, want) in p.values().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn identical_nodes_split_evenly() {
        let mut f = Forest::new(4);
        let t = f.create_tree("s", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let a = f.add_child(t, NodeId(0), NodeDraft::from_eval("a", "a", "", &ok(2.0))).unwrap();
        f.add_child(t, NodeId(0), NodeDraft::from_eval("b", "b", "", &ok(2.0))).unwrap();
        f.mark_pruned(t, NodeId(0), "test").unwrap();
        let p = node_probabilities(f.tree(t).unwrap(), &unit()).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[&a] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn high_temperature_is_uniform() {
        let (f, t) = three_nodes();
        let params = SamplingParams { temperature: 1e6, ..unit() };
        for p in node_probabilities(f.tree(t).unwrap(), &params).unwrap().values() {
            assert!((p - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn no_sampleable_node_is_an_error() {
        let mut f = Forest::new(4);
        let t = f
            .create_tree("s", "x", &EvalResult::failure("bad", 0.0), TreeOrigin::Seed)
            .unwrap();
        assert_eq!(
            node_probabilities(f.tree(t).unwrap(), &unit()),
            Err(SamplingError::NoSampleableNode(t))
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_tree(&f, &TreeScoreWeights::default(), &unit(), &TokenFrequency, &mut rng),
            Err(SamplingError::NoViableTree)
        );
    }

    #[test]
    fn single_node_and_seeded_determinism() {
        let mut f = Forest::new(4);
        let t = f.create_tree("s", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            assert_eq!(sample_node(f.tree(t).unwrap(), &unit(), &mut rng), Ok(NodeId(0)));
        }
        let (f, t) = three_nodes();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_node(f.tree(t).unwrap(), &unit(), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }

    #[test]
    fn tree_score_terms_in_isolation() {
        let mut f = Forest::new(4);
        let t = f.create_tree("s", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let a = f.add_child(t, NodeId(0), NodeDraft::from_eval("a", "a", "", &ok(1.1))).unwrap();
        f.add_child(t, a, NodeDraft::from_eval("b", "b", "", &ok(1.4))).unwrap();
        let tree = f.tree(t).unwrap();
        let perf_only = TreeScoreWeights { performance: 1.0, potential: 0.0, diversity: 0.0, window: 5 };
        assert!((tree_score(tree, &f, &perf_only, &TokenFrequency) - 1.4).abs() < 1e-12);
        let potential_only = TreeScoreWeights { performance: 0.0, potential: 1.0, diversity: 0.0, window: 2 };
        assert!((tree_score(tree, &f, &potential_only, &TokenFrequency) - 0.2).abs() < 1e-12);
        let diversity_only = TreeScoreWeights { performance: 0.0, potential: 0.0, diversity: 1.0, window: 2 };
        assert_eq!(tree_score(tree, &f, &diversity_only, &TokenFrequency), 1.0);
    }

    #[test]
    fn identical_trees_have_zero_diversity() {
        let mut f = Forest::new(4);
        let a = f.create_tree("a", "same code", &ok(2.0), TreeOrigin::Seed).unwrap();
        let b = f.create_tree("b", "same code", &ok(2.0), TreeOrigin::Seed).unwrap();
        let w = TreeScoreWeights { performance: 0.0, potential: 0.0, diversity: 1.0, window: 5 };
        for t in [a, b] {
            assert!(tree_score(f.tree(t).unwrap(), &f, &w, &TokenFrequency).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_softmax_closed_form() {
        // perf scores 0 and ln 3 at T = 1 give 1/4 and 3/4
        let mut f = Forest::new(4);
        let a = f.create_tree("a", "alpha", &ok(0.0), TreeOrigin::Seed).unwrap();
        let b = f.create_tree("b", "beta", &ok(3f64.ln()), TreeOrigin::Seed).unwrap();
        let w = TreeScoreWeights { performance: 1.0, potential: 0.0, diversity: 0.0, window: 5 };
        let p = tree_probabilities(&f, &w, &unit(), &TokenFrequency).unwrap();
        assert!((p[&a] - 0.25).abs() < 1e-12);
        assert!((p[&b] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn lone_tree_is_always_sampled() {
        let mut f = Forest::new(4);
        let a = f.create_tree("a", "alpha", &ok(0.0), TreeOrigin::Seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            assert_eq!(
                sample_tree(&f, &TreeScoreWeights::default(), &unit(), &TokenFrequency, &mut rng),
                Ok(a)
            );
        }
    }

    #[test]
    fn equal_tree_scores_sample_uniformly() {
        let mut f = Forest::new(4);
        let a = f.create_tree("a", "same", &ok(1.0), TreeOrigin::Seed).unwrap();
        f.create_tree("b", "same", &ok(1.0), TreeOrigin::Seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| sample_tree(&f, &TreeScoreWeights::default(), &unit(), &TokenFrequency, &mut rng) == Ok(a))
            .count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.02);
    }
}
