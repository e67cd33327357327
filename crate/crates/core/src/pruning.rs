//! Multi-stage pruning: hopeless branches, stagnant low-reward leaves, and
//! whole trees once the forest exceeds its capacity.
//!
//! Pruned nodes are tombstoned in place; see [`Forest::compact`] for physical
//! removal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::forest::{Forest, ForestError, NodeId, NodeStatus, PhyloTree, TreeId};
use crate::sampling::potential;

pub const REASON_HOPELESS: &str = "hopeless";
pub const REASON_LOW_POTENTIAL: &str = "low_potential";
pub const REASON_FOREST_CAPACITY: &str = "forest_capacity";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionWeights {
    pub best: f64,
    pub weighted: f64,
    pub potential: f64,
    /// Per-level decay applied to shallower nodes in the depth-weighted reward.
    pub depth_decay: f64,
}

impl Default for RetentionWeights {
    fn default() -> Self {
        Self { best: 0.5, weighted: 0.3, potential: 0.2, depth_decay: 0.8 }
    }
}

impl RetentionWeights {
    pub fn validate(&self) -> Result<(), String> {
        if ![self.best, self.weighted, self.potential].iter().all(|w| w.is_finite()) {
            return Err("retention weights must be finite".into());
        }
        if !(self.depth_decay > 0.0 && self.depth_decay <= 1.0) {
            return Err("depth_decay must lie in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LowPotentialParams {
    /// Epochs a leaf may sit without a successful child before it is eligible.
    pub stagnation_epochs: u64,
    /// Leaves strictly below this percentile of the tree's successful rewards are eligible.
    pub percentile: f64,
}

impl Default for LowPotentialParams {
    fn default() -> Self {
        Self { stagnation_epochs: 10, percentile: 25.0 }
    }
}

impl LowPotentialParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.stagnation_epochs == 0 {
            return Err("stagnation_epochs must be at least 1".into());
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err("percentile must lie strictly between 0 and 100".into());
        }
        Ok(())
    }
}

/// For every non-tombstoned node: does its live subtree consist only of
/// nodes with negative delta?
fn all_negative(tree: &PhyloTree) -> BTreeMap<NodeId, bool> {
    let mut memo = BTreeMap::new();
    for id in tree.bfs().into_iter().rev() {
        let node = &tree.nodes[&id];
        if node.status.is_pruned() {
            continue;
        }
        let children_negative = tree
            .children_of(id)
            .iter()
            .filter_map(|c| memo.get(c))
            .all(|neg| *neg);
        memo.insert(id, node.delta_reward < 0.0 && children_negative);
    }
    memo
}

/// Roots of maximal live subtrees (strictly below the tree root) whose
/// nodes all have negative delta.
pub fn hopeless_subtrees(tree: &PhyloTree) -> Vec<NodeId> {
    let negative = all_negative(tree);
    tree.bfs()
        .into_iter()
        .filter(|id| *id != tree.root_id && negative.get(id) == Some(&true))
        .filter(|id| {
            let parent = tree.nodes[id].parent_id.expect("non-root");
            parent == tree.root_id || negative.get(&parent) != Some(&true)
        })
        .collect()
}

/// Tombstones every maximal all-negative subtree except its most informative
/// failure (largest |delta|), which is kept as a `Failed` node flagged
/// `retained`. Returns the roots of subtrees that changed.
pub fn prune_hopeless(forest: &mut Forest, tree_id: TreeId) -> Result<Vec<NodeId>, ForestError> {
    let epoch = forest.epoch;
    let tree = forest.tree_mut(tree_id)?;
    let mut changed = Vec::new();
    for root in hopeless_subtrees(tree) {
        let members: Vec<NodeId> = tree
            .subtree(root)
            .into_iter()
            .filter(|id| !tree.nodes[id].status.is_pruned())
            .collect();
        let keep = *members
            .iter()
            .max_by(|a, b| {
                let (na, nb) = (&tree.nodes[*a], &tree.nodes[*b]);
                na.delta_reward
                    .abs()
                    .total_cmp(&nb.delta_reward.abs())
                    .then(nb.id.cmp(&na.id))
            })
            .expect("subtree root is live");
        let kept = &tree.nodes[&keep];
        if members.len() == 1 && kept.status.is_failed() {
            continue;
        }
        for id in &members {
            let node = tree.nodes.get_mut(id).expect("member exists");
            if *id == keep {
                if !node.status.is_failed() {
                    node.status = NodeStatus::Failed {
                        reason: format!("informative failure: delta {:.6}", node.delta_reward),
                    };
                }
                node.retained = true;
            } else {
                node.status = NodeStatus::Pruned { reason: REASON_HOPELESS.to_string() };
                node.pruned_at = Some(epoch);
            }
        }
        changed.push(root);
    }
    Ok(changed)
}

/// Linear-interpolated percentile (0..=100) of a non-empty sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Tombstones stale successful leaves with non-negative delta whose reward is
/// below the configured percentile. A leaf here has no successful children;
/// failed attempts below it are tombstoned along with it.
pub fn prune_low_potential(
    forest: &mut Forest,
    tree_id: TreeId,
    params: &LowPotentialParams,
) -> Result<Vec<NodeId>, ForestError> {
    let epoch = forest.epoch;
    let tree = forest.tree_mut(tree_id)?;
    let rewards: Vec<f64> = tree.success_nodes().map(|n| n.reward).collect();
    if rewards.is_empty() {
        return Ok(Vec::new());
    }
    let cutoff = percentile(&rewards, params.percentile);
    let victims: Vec<NodeId> = tree
        .success_nodes()
        .filter(|n| n.parent_id.is_some())
        .filter(|n| n.delta_reward >= 0.0 && n.reward < cutoff)
        .filter(|n| epoch.saturating_sub(n.created_at) >= params.stagnation_epochs)
        .filter(|n| {
            !tree
                .children_of(n.id)
                .iter()
                .any(|c| tree.nodes[c].status.is_success())
        })
        .map(|n| n.id)
        .collect();
    for &victim in &victims {
        for id in tree.subtree(victim) {
            let node = tree.nodes.get_mut(&id).expect("subtree member");
            if !node.status.is_pruned() {
                node.status = NodeStatus::Pruned { reason: REASON_LOW_POTENTIAL.to_string() };
                node.pruned_at = Some(epoch);
            }
        }
    }
    Ok(victims)
}

/// Depth-weighted mean reward of successful nodes: deeper (more recent) nodes
/// weigh more, each level up is multiplied by `decay`.
pub fn weighted_reward(tree: &PhyloTree, decay: f64) -> Option<f64> {
    let max_depth = tree.success_nodes().map(|n| n.depth).max()?;
    let (num, den) = tree.success_nodes().fold((0.0, 0.0), |(num, den), n| {
        let w = decay.powi((max_depth - n.depth) as i32);
        (num + w * n.reward, den + w)
    });
    Some(num / den)
}

fn min_max(raw: &BTreeMap<TreeId, f64>) -> BTreeMap<TreeId, f64> {
    let lo = raw.values().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.values().copied().fold(f64::NEG_INFINITY, f64::max);
    raw.iter()
        .map(|(id, v)| {
            let n = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            (*id, n)
        })
        .collect()
}

/// Retention score of every tree. Best and depth-weighted rewards are min-max
/// normalized across the trees that have a successful node; trees without one
/// take 0 for both normalized terms.
pub fn retain_scores(forest: &Forest, weights: &RetentionWeights, window: usize) -> BTreeMap<TreeId, f64> {
    let best: BTreeMap<TreeId, f64> = forest
        .trees
        .values()
        .filter_map(|t| t.best_reward().map(|r| (t.id, r)))
        .collect();
    let weighted: BTreeMap<TreeId, f64> = forest
        .trees
        .values()
        .filter_map(|t| weighted_reward(t, weights.depth_decay).map(|r| (t.id, r)))
        .collect();
    let (best, weighted) = (min_max(&best), min_max(&weighted));
    forest
        .trees
        .values()
        .map(|t| {
            let score = weights.best * best.get(&t.id).copied().unwrap_or(0.0)
                + weights.weighted * weighted.get(&t.id).copied().unwrap_or(0.0)
                + weights.potential * potential(t, window);
            (t.id, score)
        })
        .collect()
}

pub fn retain_score(tree: TreeId, forest: &Forest, weights: &RetentionWeights, window: usize) -> Option<f64> {
    retain_scores(forest, weights, window).get(&tree).copied()
}

/// Removes the lowest-retention trees until the forest fits its capacity.
/// Scores are computed once up front; ties go to the older tree. The tree that
/// holds the forest-wide best node is never removed.
pub fn prune_forest(forest: &mut Forest, weights: &RetentionWeights, window: usize) -> Vec<TreeId> {
    if forest.len() <= forest.capacity {
        return Vec::new();
    }
    let protected = forest.best_in_forest().ok().map(|(t, _)| t);
    let scores = retain_scores(forest, weights, window);
    let mut order: Vec<TreeId> = scores.keys().copied().filter(|t| Some(*t) != protected).collect();
    order.sort_by(|a, b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(forest.trees[a].meta.created_epoch.cmp(&forest.trees[b].meta.created_epoch))
            .then(a.cmp(b))
    });
    let excess = forest.len() - forest.capacity;
    let removed: Vec<TreeId> = order.into_iter().take(excess).collect();
    for id in &removed {
        forest.remove_tree(*id);
    }
    removed
}
