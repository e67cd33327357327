//! Property tests over the scoring, sampling, pruning and serialization layers.

use phylo_core::elite_pool::{modification_value, ElitePool};
use phylo_core::executor::EvalResult;
use phylo_core::features::TokenFrequency;
use phylo_core::forest::{parse_sexpr, to_sexpr, Forest, NodeDraft, NodeId, Outcome, TreeId, TreeOrigin};
use phylo_core::orchestrator::checkpoint::{decode, encode};
use phylo_core::orchestrator::{CheckpointBody, RunConfig, RunState};
use phylo_core::pruning::{hopeless_subtrees, prune_forest, prune_hopeless, RetentionWeights};
use phylo_core::sampling::{node_probabilities, softmax, SamplingParams};
use proptest::prelude::*;

/// One child per entry: (parent index into earlier nodes, reward, failed, summary).
type Shape = Vec<(usize, f64, bool, String)>;

fn shape(max: usize) -> impl Strategy<Value = Shape> {
    prop::collection::vec((any::<usize>(), -50.0f64..50.0, prop::bool::weighted(0.2), "[ -~\n\t\"\\\\]{0,12}"), 0..max)
}

fn build(root_reward: f64, shape: &Shape) -> (Forest, TreeId) {
    let mut f = Forest::new(4);
    let t = f.create_tree("s", "code", &EvalResult::success(root_reward, 0.0), TreeOrigin::Seed).unwrap();
    let mut ids = vec![NodeId(0)];
    for (i, (parent, reward, failed, summary)) in shape.iter().enumerate() {
        let mut draft = NodeDraft::from_eval(format!("code {i}"), summary.as_str(), "", &EvalResult::success(*reward, 0.0));
        if *failed {
            draft.outcome = Outcome::Failed(summary.clone());
        }
        let parent = ids[parent % ids.len()];
        ids.push(f.add_child(t, parent, draft).unwrap());
    }
    (f, t)
}

proptest! {
    #[test]
    fn elite_value_stays_between_half_and_full_mean(mu in -1e3f64..1e3, var in 0.0f64..1e3, n in 1u64..1_000_000) {
        let v = modification_value(mu, var, n);
        let (lo, hi) = if mu >= 0.0 { (0.5 * mu, mu) } else { (mu, 0.5 * mu) };
        prop_assert!(lo <= v && v <= hi);
        if mu > 0.0 {
            prop_assert!(modification_value(mu, var, n + 1) >= v);
            prop_assert!(modification_value(mu, var + 1.0, n) <= v);
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 1..20),
        shift in -100.0f64..100.0,
        t in 0.01f64..100.0,
    ) {
        let p = softmax(&logits, t);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted, t)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn node_probabilities_cover_exactly_the_success_nodes(root in -10.0f64..10.0, s in shape(30)) {
        let (f, t) = build(root, &s);
        let tree = f.tree(t).unwrap();
        let probs = node_probabilities(tree, &SamplingParams::default()).unwrap();
        let expected: Vec<NodeId> = tree.success_nodes().map(|n| n.id).collect();
        prop_assert_eq!(probs.keys().copied().collect::<Vec<_>>(), expected);
        prop_assert!((probs.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sexpr_round_trips(root in -10.0f64..10.0, s in shape(50), include_pruned in any::<bool>()) {
        let (mut f, t) = build(root, &s);
        prune_hopeless(&mut f, t).unwrap();
        let tree = f.tree(t).unwrap();
        let text = to_sexpr(tree, include_pruned);
        let parsed = parse_sexpr(&text).unwrap();
        prop_assert_eq!(to_sexpr(&parsed, include_pruned), text);
        if include_pruned {
            let full = to_sexpr(tree, true);
            prop_assert_eq!(to_sexpr(&parse_sexpr(&full).unwrap(), true), full);
        }
    }

    #[test]
    fn hopeless_pruning_leaves_one_live_failure_per_subtree(root in -10.0f64..10.0, s in shape(40)) {
        let (mut f, t) = build(root, &s);
        let before = hopeless_subtrees(f.tree(t).unwrap());
        let best_before = f.tree(t).unwrap().best_reward();
        prune_hopeless(&mut f, t).unwrap();
        let tree = f.tree(t).unwrap();
        for r in before {
            let live: Vec<_> = tree.subtree(r).into_iter().filter(|id| !tree.nodes[id].status.is_pruned()).collect();
            prop_assert_eq!(live.len(), 1);
            prop_assert!(tree.nodes[&live[0]].status.is_failed());
        }
        prop_assert_eq!(tree.best_reward(), best_before);
        // idempotent
        prop_assert!(prune_hopeless(&mut f, t).unwrap().is_empty());
    }

    #[test]
    fn prune_forest_respects_capacity_and_keeps_best(
        roots in prop::collection::vec(-10.0f64..10.0, 1..10),
        cap in 1usize..6,
    ) {
        let mut f = Forest::new(cap);
        for (i, r) in roots.iter().enumerate() {
            f.create_tree(&format!("t{i}"), "c", &EvalResult::success(*r, 0.0), TreeOrigin::Seed).unwrap();
        }
        let best = f.best_in_forest().unwrap().0;
        let removed = prune_forest(&mut f, &RetentionWeights::default(), 5);
        prop_assert_eq!(f.len(), roots.len().min(cap));
        prop_assert_eq!(removed.len(), roots.len().saturating_sub(cap));
        prop_assert!(f.trees.contains_key(&best));
    }

    #[test]
    fn streaming_top_k_equals_sorted_top_k(rewards in prop::collection::vec(-20i32..20, 1..80), k in 1usize..30) {
        let mut f = Forest::new(1);
        let t = f.create_tree("s", "c", &EvalResult::success(0.0, 0.0), TreeOrigin::Seed).unwrap();
        let mut pool = ElitePool::new(k);
        let mut all = Vec::new();
        for (i, r) in rewards.iter().enumerate() {
            let reward = f64::from(*r);
            let id = f.add_child(t, NodeId(0), NodeDraft::from_eval("c", "m", "", &EvalResult::success(reward, 0.0))).unwrap();
            let node = f.node(t, id).unwrap().clone();
            pool.maybe_admit_trajectory(f.trajectory(t, id).unwrap(), &node, 0, &TokenFrequency).unwrap();
            all.push((reward, i, id));
        }
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let expected: Vec<NodeId> = all.iter().take(k).map(|e| e.2).collect();
        let got: Vec<NodeId> = pool.trajectories().iter().map(|e| e.trajectory.last_node()).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn checkpoint_encoding_round_trips(seed in any::<u64>(), epochs in 1u64..100, root in -10.0f64..10.0, s in shape(20)) {
        let config = RunConfig::from_json(&format!(
            r#"{{"seed": {seed}, "epochs": {epochs}, "task": "quadratic-1d", "seeds": [{{"label": "a"}}],
                "backends": {{"default": {{"kind": "hill_climber"}}}}}}"#
        )).unwrap();
        let mut state = RunState::new(&config);
        let (f, _) = build(root, &s);
        state.forest = f;
        let body = CheckpointBody::new(config, state, serde_json::Value::Null);
        prop_assert_eq!(decode(&encode(&body)).unwrap(), body);
    }
}
