//! Phylogenetic forest: lineage trees of candidate programs.
//!
//! A [`Forest`] owns a set of [`PhyloTree`]s. Every tree is a strict tree
//! rooted at a seed (or redesign) candidate; each edge is one modification and
//! carries the reward delta it produced. Nodes are never physically removed by
//! pruning. They are tombstoned with [`NodeStatus::Pruned`] and only dropped by
//! [`Forest::compact`].

mod dot;
mod sexpr;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::elite_pool::modification_key;
use crate::executor::{EvalOutcome, EvalResult};

pub use dot::to_dot;
pub use sexpr::{forest_sexpr, parse_sexpr, to_sexpr, SexprError};

/// Reward assigned to failed evaluations unless configured otherwise.
pub const DEFAULT_FAILURE_SENTINEL: f64 = -1e18;

macro_rules! counter_id {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix)
                    .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                    .and_then(|rest| rest.parse().ok())
                    .map($name)
                    .ok_or_else(|| format!(concat!("expected ", $prefix, "<number>, got {:?}"), s))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

counter_id!(NodeId, "n");
counter_id!(TreeId, "t");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("unknown tree {0}")]
    UnknownTree(TreeId),
    #[error("unknown node {node} in tree {tree}")]
    UnknownNode { tree: TreeId, node: NodeId },
    #[error("parent {0} is pruned; resample a parent")]
    ParentPruned(NodeId),
    #[error("a tree seeded from {0:?} already exists")]
    DuplicateSeed(String),
    #[error("no viable candidate: no successful node")]
    NoViableCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeStatus {
    Success,
    Failed { reason: String },
    Pruned { reason: String },
}

impl NodeStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, NodeStatus::Success)
    }

    pub fn is_pruned(&self) -> bool {
        matches!(self, NodeStatus::Pruned { .. })
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, NodeStatus::Failed { .. })
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            NodeStatus::Success => None,
            NodeStatus::Failed { reason } | NodeStatus::Pruned { reason } => Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmNode {
    pub id: NodeId,
    pub parent_id: Option<NodeId>,
    pub code: String,
    pub modification_summary: String,
    pub modification_key: String,
    pub detailed_spec: String,
    pub reward: f64,
    pub delta_reward: f64,
    pub metrics: BTreeMap<String, f64>,
    pub status: NodeStatus,
    pub depth: u32,
    pub constraint_ok: bool,
    /// Forest epoch at creation.
    pub created_at: u64,
    /// Kept on purpose as an informative failure by hopeless-branch pruning.
    #[serde(default)]
    pub retained: bool,
    /// Epoch at which the node was tombstoned.
    #[serde(default)]
    pub pruned_at: Option<u64>,
}

impl AlgorithmNode {
    /// Success and not tombstoned; the only nodes that may be expanded.
    pub fn is_sampleable(&self) -> bool {
        self.status.is_success()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeOrigin {
    Seed,
    Redesign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMeta {
    pub label: String,
    pub created_epoch: u64,
    pub origin: TreeOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyloTree {
    pub id: TreeId,
    pub root_id: NodeId,
    pub nodes: BTreeMap<NodeId, AlgorithmNode>,
    pub children: BTreeMap<NodeId, Vec<NodeId>>,
    pub meta: TreeMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub node_id: NodeId,
    pub modification_summary: String,
    pub delta_reward: f64,
    pub reward: f64,
}

/// Root-to-node path through one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tree_id: TreeId,
    pub steps: Vec<TrajectoryStep>,
    pub final_reward: f64,
}

impl Trajectory {
    pub fn last_node(&self) -> NodeId {
        self.steps.last().expect("trajectory has at least the root").node_id
    }

    /// Concatenated modification summaries, used for similarity features.
    pub fn feature_text(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.modification_summary.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Result of evaluating a candidate, as recorded on a node.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Scored(f64),
    Failed(String),
}

impl From<&EvalResult> for Outcome {
    fn from(result: &EvalResult) -> Self {
        match &result.outcome {
            EvalOutcome::Success { score } => Outcome::Scored(*score),
            EvalOutcome::Failure { reason } => Outcome::Failed(reason.clone()),
        }
    }
}

/// Everything needed to attach a new node below an existing one.
#[derive(Debug, Clone)]
pub struct NodeDraft {
    pub code: String,
    pub modification_summary: String,
    pub detailed_spec: String,
    pub outcome: Outcome,
    pub metrics: BTreeMap<String, f64>,
    pub constraint_ok: bool,
}

impl NodeDraft {
    pub fn from_eval(code: impl Into<String>, summary: impl Into<String>, spec: impl Into<String>, eval: &EvalResult) -> Self {
        let mut metrics = BTreeMap::new();
        metrics.insert("runtime_ms".to_string(), eval.runtime_ms);
        Self {
            code: code.into(),
            modification_summary: summary.into(),
            detailed_spec: spec.into(),
            outcome: Outcome::from(eval),
            metrics,
            constraint_ok: eval.constraint_ok,
        }
    }
}

impl PhyloTree {
    pub fn node(&self, id: NodeId) -> Result<&AlgorithmNode, ForestError> {
        self.nodes.get(&id).ok_or(ForestError::UnknownNode { tree: self.id, node: id })
    }

    pub fn root(&self) -> &AlgorithmNode {
        &self.nodes[&self.root_id]
    }

    pub fn children_of(&self, id: NodeId) -> &[NodeId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes in breadth-first order from the root, children in creation order.
    pub fn bfs(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([self.root_id]);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            queue.extend(self.children_of(id).iter().copied());
        }
        order
    }

    /// All nodes of the subtree rooted at `id`, including `id`.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.children_of(n).iter().rev().copied());
        }
        out
    }

    pub fn success_nodes(&self) -> impl Iterator<Item = &AlgorithmNode> {
        self.nodes.values().filter(|n| n.status.is_success())
    }

    pub fn trajectory(&self, node_id: NodeId) -> Result<Trajectory, ForestError> {
        let mut path = Vec::new();
        let mut cursor = Some(node_id);
        while let Some(id) = cursor {
            let node = self.node(id)?;
            path.push(TrajectoryStep {
                node_id: id,
                modification_summary: node.modification_summary.clone(),
                delta_reward: node.delta_reward,
                reward: node.reward,
            });
            cursor = node.parent_id;
        }
        path.reverse();
        let final_reward = self.node(node_id)?.reward;
        Ok(Trajectory { tree_id: self.id, steps: path, final_reward })
    }

    /// Other non-tombstoned children of the node's parent.
    pub fn siblings(&self, node_id: NodeId) -> Result<Vec<&AlgorithmNode>, ForestError> {
        let node = self.node(node_id)?;
        let Some(parent) = node.parent_id else {
            return Ok(Vec::new());
        };
        Ok(self
            .children_of(parent)
            .iter()
            .filter(|&&c| c != node_id)
            .map(|c| &self.nodes[c])
            .filter(|n| !n.status.is_pruned())
            .collect())
    }

    /// Highest-reward successful node; ties go to the earliest created.
    pub fn best_node(&self) -> Result<NodeId, ForestError> {
        self.success_nodes()
            .min_by(|a, b| {
                b.reward
                    .total_cmp(&a.reward)
                    .then(a.created_at.cmp(&b.created_at))
                    .then(a.id.cmp(&b.id))
            })
            .map(|n| n.id)
            .ok_or(ForestError::NoViableCandidate)
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best_node().ok().map(|id| self.nodes[&id].reward)
    }

    /// Checks structural invariants, returning a description of the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let root = self.nodes.get(&self.root_id).ok_or("root missing from node set")?;
        if root.parent_id.is_some() || root.depth != 0 {
            return Err("root must have no parent and depth 0".into());
        }
        let mut seen = BTreeMap::new();
        let mut queue = VecDeque::from([self.root_id]);
        while let Some(id) = queue.pop_front() {
            if seen.insert(id, ()).is_some() {
                return Err(format!("{id} reachable twice"));
            }
            let node = self.nodes.get(&id).ok_or_else(|| format!("child {id} not in node set"))?;
            for &c in self.children_of(id) {
                let child = self.nodes.get(&c).ok_or_else(|| format!("child {c} not in node set"))?;
                if child.parent_id != Some(id) {
                    return Err(format!("{c} listed under {id} but has parent {:?}", child.parent_id));
                }
                if child.depth != node.depth + 1 {
                    return Err(format!("{c} has depth {} under parent depth {}", child.depth, node.depth));
                }
                queue.push_back(c);
            }
        }
        if seen.len() != self.nodes.len() {
            return Err(format!("{} of {} nodes reachable from root", seen.len(), self.nodes.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: BTreeMap<TreeId, PhyloTree>,
    pub capacity: usize,
    pub epoch: u64,
    pub failure_sentinel: f64,
    next_node: u64,
    next_tree: u64,
}

impl Forest {
    pub fn new(capacity: usize) -> Self {
        Self::with_sentinel(capacity, DEFAULT_FAILURE_SENTINEL)
    }

    pub fn with_sentinel(capacity: usize, failure_sentinel: f64) -> Self {
        assert!(capacity > 0, "forest capacity must be positive");
        Self {
            trees: BTreeMap::new(),
            capacity,
            epoch: 0,
            failure_sentinel,
            next_node: 0,
            next_tree: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn tree(&self, id: TreeId) -> Result<&PhyloTree, ForestError> {
        self.trees.get(&id).ok_or(ForestError::UnknownTree(id))
    }

    pub(crate) fn tree_mut(&mut self, id: TreeId) -> Result<&mut PhyloTree, ForestError> {
        self.trees.get_mut(&id).ok_or(ForestError::UnknownTree(id))
    }

    fn fresh_node_id(&mut self) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        id
    }

    fn reward_of(&self, outcome: &Outcome) -> f64 {
        match outcome {
            Outcome::Scored(score) => *score,
            Outcome::Failed(_) => self.failure_sentinel,
        }
    }

    /// Starts a new lineage from a seed artifact. `label` identifies the seed
    /// and must be unique within the forest.
    pub fn create_tree(
        &mut self,
        label: &str,
        seed_code: &str,
        eval: &EvalResult,
        origin: TreeOrigin,
    ) -> Result<TreeId, ForestError> {
        if self.trees.values().any(|t| t.meta.label == label) {
            return Err(ForestError::DuplicateSeed(label.to_string()));
        }
        let mut draft = NodeDraft::from_eval(seed_code, "seed", "", eval);
        if origin == TreeOrigin::Redesign {
            draft.modification_summary = "redesign".to_string();
        }
        Ok(self.insert_tree(label, origin, draft))
    }

    pub(crate) fn insert_tree(&mut self, label: &str, origin: TreeOrigin, draft: NodeDraft) -> TreeId {
        let tree_id = TreeId(self.next_tree);
        self.next_tree += 1;
        let root_id = self.fresh_node_id();
        let reward = self.reward_of(&draft.outcome);
        let status = match draft.outcome {
            Outcome::Scored(_) => NodeStatus::Success,
            Outcome::Failed(reason) => NodeStatus::Failed { reason },
        };
        let root = AlgorithmNode {
            id: root_id,
            parent_id: None,
            modification_key: modification_key(&draft.modification_summary),
            code: draft.code,
            modification_summary: draft.modification_summary,
            detailed_spec: draft.detailed_spec,
            reward,
            delta_reward: 0.0,
            metrics: draft.metrics,
            status,
            depth: 0,
            constraint_ok: draft.constraint_ok,
            created_at: self.epoch,
            retained: false,
            pruned_at: None,
        };
        let tree = PhyloTree {
            id: tree_id,
            root_id,
            nodes: BTreeMap::from([(root_id, root)]),
            children: BTreeMap::new(),
            meta: TreeMeta {
                label: label.to_string(),
                created_epoch: self.epoch,
                origin,
            },
        };
        self.trees.insert(tree_id, tree);
        tree_id
    }

    pub fn add_child(&mut self, tree_id: TreeId, parent_id: NodeId, draft: NodeDraft) -> Result<NodeId, ForestError> {
        let parent = self.tree(tree_id)?.node(parent_id)?;
        if parent.status.is_pruned() {
            return Err(ForestError::ParentPruned(parent_id));
        }
        let (parent_reward, parent_depth) = (parent.reward, parent.depth);
        let reward = self.reward_of(&draft.outcome);
        let status = match draft.outcome {
            Outcome::Scored(_) => NodeStatus::Success,
            Outcome::Failed(reason) => NodeStatus::Failed { reason },
        };
        let id = self.fresh_node_id();
        let node = AlgorithmNode {
            id,
            parent_id: Some(parent_id),
            modification_key: modification_key(&draft.modification_summary),
            code: draft.code,
            modification_summary: draft.modification_summary,
            detailed_spec: draft.detailed_spec,
            reward,
            delta_reward: reward - parent_reward,
            metrics: draft.metrics,
            status,
            depth: parent_depth + 1,
            constraint_ok: draft.constraint_ok,
            created_at: self.epoch,
            retained: false,
            pruned_at: None,
        };
        let tree = self.tree_mut(tree_id)?;
        tree.nodes.insert(id, node);
        tree.children.entry(parent_id).or_default().push(id);
        Ok(id)
    }

    pub fn trajectory(&self, tree_id: TreeId, node_id: NodeId) -> Result<Trajectory, ForestError> {
        self.tree(tree_id)?.trajectory(node_id)
    }

    pub fn siblings(&self, tree_id: TreeId, node_id: NodeId) -> Result<Vec<&AlgorithmNode>, ForestError> {
        self.tree(tree_id)?.siblings(node_id)
    }

    pub fn best_in_forest(&self) -> Result<(TreeId, NodeId), ForestError> {
        self.trees
            .values()
            .filter_map(|t| t.best_node().ok().map(|n| (t.id, &t.nodes[&n])))
            .min_by(|(ta, a), (tb, b)| {
                b.reward
                    .total_cmp(&a.reward)
                    .then(a.created_at.cmp(&b.created_at))
                    .then(a.id.cmp(&b.id))
                    .then(ta.cmp(tb))
            })
            .map(|(t, n)| (t, n.id))
            .ok_or(ForestError::NoViableCandidate)
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best_in_forest()
            .ok()
            .map(|(t, n)| self.trees[&t].nodes[&n].reward)
    }

    pub fn node(&self, tree_id: TreeId, node_id: NodeId) -> Result<&AlgorithmNode, ForestError> {
        self.tree(tree_id)?.node(node_id)
    }

    pub fn remove_tree(&mut self, id: TreeId) -> Option<PhyloTree> {
        self.trees.remove(&id)
    }

    /// Tombstones a node in place.
    pub fn mark_pruned(&mut self, tree_id: TreeId, node_id: NodeId, reason: &str) -> Result<(), ForestError> {
        let epoch = self.epoch;
        let tree = self.tree_mut(tree_id)?;
        let node = tree
            .nodes
            .get_mut(&node_id)
            .ok_or(ForestError::UnknownNode { tree: tree_id, node: node_id })?;
        node.status = NodeStatus::Pruned { reason: reason.to_string() };
        node.pruned_at = Some(epoch);
        Ok(())
    }

    /// Physically removes maximal subtrees made only of tombstones that were
    /// pruned at least `horizon` epochs ago. Returns the number of nodes dropped.
    pub fn compact(&mut self, horizon: u64) -> usize {
        let now = self.epoch;
        let stale = |n: &AlgorithmNode| {
            n.status.is_pruned() && n.pruned_at.is_some_and(|at| now.saturating_sub(at) >= horizon)
        };
        let mut dropped = 0;
        for tree in self.trees.values_mut() {
            let mut removable = Vec::new();
            for id in tree.bfs() {
                if id == tree.root_id {
                    continue;
                }
                let parent = tree.nodes[&id].parent_id.expect("non-root has parent");
                if removable.contains(&parent) {
                    continue;
                }
                if tree.subtree(id).iter().all(|n| stale(&tree.nodes[n])) {
                    removable.push(id);
                }
            }
            for id in removable {
                let parent = tree.nodes[&id].parent_id.expect("non-root has parent");
                for n in tree.subtree(id) {
                    tree.nodes.remove(&n);
                    tree.children.remove(&n);
                    dropped += 1;
                }
                if let Some(list) = tree.children.get_mut(&parent) {
                    list.retain(|&c| c != id);
                    if list.is_empty() {
                        tree.children.remove(&parent);
                    }
                }
            }
        }
        dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok(score: f64) -> EvalResult {
        EvalResult::success(score, 1.0)
    }

    fn draft(summary: &str, score: f64) -> NodeDraft {
        NodeDraft::from_eval("code", summary, "spec", &ok(score))
    }

    #[test]
    fn create_tree_sets_root_fields() {
        let mut f = Forest::new(4);
        let t = f.create_tree("seed-a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let tree = f.tree(t).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let root = tree.root();
        assert_eq!(root.reward, 1.0);
        assert_eq!(root.depth, 0);
        assert_eq!(root.delta_reward, 0.0);
        assert!(root.status.is_success());
    }

    #[test]
    fn failed_seed_gets_sentinel() {
        let mut f = Forest::new(4);
        let t = f
            .create_tree("s", "x", &EvalResult::failure("boom", 0.0), TreeOrigin::Seed)
            .unwrap();
        let root = f.tree(t).unwrap().root();
        assert!(root.status.is_failed());
        assert_eq!(root.reward, DEFAULT_FAILURE_SENTINEL);
    }

    #[test]
    fn two_trees_have_distinct_ids_and_duplicates_are_rejected() {
        let mut f = Forest::new(4);
        let a = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let b = f.create_tree("b", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        assert_ne!(a, b);
        assert_eq!(f.len(), 2);
        assert_eq!(
            f.create_tree("a", "y", &ok(2.0), TreeOrigin::Seed),
            Err(ForestError::DuplicateSeed("a".into()))
        );
    }

    #[test]
    fn child_delta_is_reward_difference() {
        let mut f = Forest::new(4);
        let t = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let root = f.tree(t).unwrap().root_id;
        let up = f.add_child(t, root, draft("up", 1.5)).unwrap();
        let same = f.add_child(t, root, draft("same", 1.0)).unwrap();
        assert_eq!(f.node(t, up).unwrap().delta_reward, 0.5);
        assert_eq!(f.node(t, same).unwrap().delta_reward, 0.0);
        assert_eq!(f.node(t, up).unwrap().depth, 1);
        assert_eq!(f.tree(t).unwrap().children_of(root), &[up, same]);
    }

    #[test]
    fn chain_trajectory_matches_hand_walk() {
        let mut f = Forest::new(4);
        let t = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let root = f.tree(t).unwrap().root_id;
        let a = f.add_child(t, root, draft("a", 1.2)).unwrap();
        let b = f.add_child(t, a, draft("b", 1.1)).unwrap();
        let traj = f.trajectory(t, b).unwrap();
        let deltas: Vec<f64> = traj.steps[1..].iter().map(|s| s.delta_reward).collect();
        assert!((deltas[0] - 0.2).abs() < 1e-12);
        assert!((deltas[1] + 0.1).abs() < 1e-12);
        assert_eq!(traj.final_reward, 1.1);
        assert_eq!(traj.steps.len(), 3);
    }

    #[test]
    fn root_trajectory_has_single_step() {
        let mut f = Forest::new(4);
        let t = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let root = f.tree(t).unwrap().root_id;
        let traj = f.trajectory(t, root).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.final_reward, 1.0);
    }

    #[test]
    fn unknown_nodes_and_pruned_parents_are_errors() {
        let mut f = Forest::new(4);
        let t = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let root = f.tree(t).unwrap().root_id;
        assert!(matches!(f.trajectory(t, NodeId(99)), Err(ForestError::UnknownNode { .. })));
        assert!(matches!(f.add_child(t, NodeId(99), draft("x", 1.0)), Err(ForestError::UnknownNode { .. })));
        let c = f.add_child(t, root, draft("c", 2.0)).unwrap();
        f.mark_pruned(t, c, "test").unwrap();
        assert_eq!(f.add_child(t, c, draft("d", 3.0)), Err(ForestError::ParentPruned(c)));
    }

    #[test]
    fn siblings_cover_only_child_many_children_and_root() {
        let mut f = Forest::new(4);
        let t = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let root = f.tree(t).unwrap().root_id;
        assert!(f.siblings(t, root).unwrap().is_empty());
        let a = f.add_child(t, root, draft("a", 1.1)).unwrap();
        assert!(f.siblings(t, a).unwrap().is_empty());
        f.add_child(t, root, draft("b", 1.2)).unwrap();
        f.add_child(t, root, draft("c", 1.3)).unwrap();
        assert_eq!(f.siblings(t, a).unwrap().len(), 2);
    }

    #[test]
    fn best_node_picks_max_with_earliest_tie() {
        let mut f = Forest::new(4);
        let t = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let root = f.tree(t).unwrap().root_id;
        assert_eq!(f.tree(t).unwrap().best_node(), Ok(root));
        f.epoch = 1;
        let two = f.add_child(t, root, draft("two", 2.0)).unwrap();
        f.add_child(t, root, draft("mid", 1.5)).unwrap();
        f.epoch = 2;
        f.add_child(t, root, draft("two again", 2.0)).unwrap();
        assert_eq!(f.tree(t).unwrap().best_node(), Ok(two));
        assert_eq!(f.best_in_forest(), Ok((t, two)));
    }

    #[test]
    fn no_success_means_no_viable_candidate() {
        let mut f = Forest::new(4);
        f.create_tree("a", "x", &EvalResult::failure("bad", 0.0), TreeOrigin::Seed)
            .unwrap();
        assert_eq!(f.best_in_forest(), Err(ForestError::NoViableCandidate));
    }

    #[test]
    fn compaction_drops_only_stale_all_pruned_subtrees() {
        let mut f = Forest::new(4);
        let t = f.create_tree("a", "x", &ok(1.0), TreeOrigin::Seed).unwrap();
        let root = f.tree(t).unwrap().root_id;
        let a = f.add_child(t, root, draft("a", 0.5)).unwrap();
        let a1 = f.add_child(t, a, draft("a1", 0.4)).unwrap();
        let b = f.add_child(t, root, draft("b", 0.9)).unwrap();
        let b1 = f.add_child(t, b, draft("b1", 0.8)).unwrap();
        f.mark_pruned(t, a, "hopeless").unwrap();
        f.mark_pruned(t, a1, "hopeless").unwrap();
        f.mark_pruned(t, b, "hopeless").unwrap();
        f.epoch = 5;
        assert_eq!(f.compact(10), 0);
        assert_eq!(f.compact(5), 2);
        let tree = f.tree(t).unwrap();
        assert!(!tree.nodes.contains_key(&a));
        assert!(tree.nodes.contains_key(&b) && tree.nodes.contains_key(&b1));
        assert_eq!(tree.children_of(root), &[b]);
        tree.validate().unwrap();
    }

    #[test]
    fn ids_round_trip_through_text() {
        assert_eq!("n42".parse::<NodeId>(), Ok(NodeId(42)));
        assert_eq!(TreeId(7).to_string(), "t7");
        assert!("n".parse::<NodeId>().is_err());
        assert!("t1".parse::<NodeId>().is_err());
        assert!("n-1".parse::<NodeId>().is_err());
    }
}
