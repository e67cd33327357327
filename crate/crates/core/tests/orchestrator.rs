//! Whole-run behavior of the orchestrator against the built-in harness.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use phylo_core::agents::{
    AgentBackends, AgentRole, BackendError, CompletionBackend, RecordingBackend, ReplayMode, ScriptedBackend,
};
use phylo_core::forest::forest_sexpr;
use phylo_core::orchestrator::{checkpoint, BackendSpec, Orchestrator, RunError, SeedSpec};
use phylo_core::testbed::{self, ClimberConfig, HillClimber};

const CLIMB_SAMPLING: &str = r#""sampling": {"alpha": 1, "beta": 0.1, "gamma": 0, "temperature": 0.1}"#;

fn climber() -> Arc<HillClimber> {
    Arc::new(HillClimber::new(testbed::builtin_task(testbed::QUADRATIC_1D).unwrap(), ClimberConfig::default()))
}

fn seeds(xs: &[f64]) -> Vec<SeedSpec> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| SeedSpec {
            label: format!("s{i}"),
            code: Some(format!("task quadratic-1d\nparam x {x}\n")),
            code_file: None,
        })
        .collect()
}

fn kinds(orch: &Orchestrator) -> Vec<String> {
    orch.state().events.iter().map(|e| e.kind.clone()).collect()
}

#[test]
fn backend_failure_aborts_with_rolled_back_checkpoint_and_resumes() {
    let config = common::config(testbed::QUADRATIC_1D, 21, 12, CLIMB_SAMPLING);
    let reference = {
        let dir = tempfile::tempdir().unwrap();
        let mut orch = common::orchestrator(&config, dir.path(), false);
        orch.run().unwrap();
        forest_sexpr(&orch.state().forest, true)
    };

    let dir = tempfile::tempdir().unwrap();
    let mut runtime = common::runtime(&config, dir.path());
    let hc = climber();
    let proposals = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&proposals);
    let inner = Arc::clone(&hc);
    let flaky = ScriptedBackend::new(move |request| {
        if counter.fetch_add(1, Ordering::SeqCst) == 6 {
            return Err(BackendError::Transport("connection reset".into()));
        }
        inner.complete(request)
    });
    runtime.backends = AgentBackends::uniform(hc).with_role(AgentRole::NextStepper, Arc::new(flaky));
    let mut orch = Orchestrator::new(config.clone(), runtime, Some(dir.path().to_path_buf())).unwrap();
    let err = orch.run().unwrap_err();
    let RunError::Aborted { epoch, message } = err else { panic!("expected an abort, got {err}") };
    assert_eq!(epoch, 6);
    assert!(message.contains("connection reset"), "{message}");
    assert_eq!(orch.state().epoch, 6);
    assert_eq!(kinds(&orch).last().map(String::as_str), Some("aborted"));

    let body = checkpoint::read(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(body.state.epoch, 6);
    let mut resumed = Orchestrator::resume(body, common::runtime(&config, dir.path()), None).unwrap();
    resumed.run().unwrap();
    assert_eq!(forest_sexpr(&resumed.state().forest, true), reference);
}

#[test]
fn islands_expand_several_trees_per_epoch_deterministically() {
    let mut config = common::config(testbed::QUADRATIC_1D, 3, 8, CLIMB_SAMPLING);
    config.seeds = seeds(&[-4.0, 0.0, 8.0]);
    config.islands = 2;
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut orch = common::orchestrator(&config, dir.path(), false);
        orch.run().unwrap();
        (orch.state().events_jsonl(), forest_sexpr(&orch.state().forest, true), kinds(&orch))
    };
    let (events, forest, kinds) = run();
    let selects = kinds.iter().filter(|k| *k == "select").count();
    assert_eq!(selects, 16, "two selections per epoch");
    assert_eq!(run(), (events, forest, kinds));
}

#[test]
fn redesigns_fill_the_forest_and_capacity_evicts_without_losing_the_best() {
    let mut config = common::config(
        testbed::QUADRATIC_1D,
        4,
        40,
        r#""macro": {"plateau": 2, "diversity": 1.0, "cooldown": 2, "summarize_interval": 10},
           "modes": {"warmup_epochs": 1}"#,
    );
    config.seeds = seeds(&[-9.0, 3.0]);
    config.forest_capacity = 2;
    let dir = tempfile::tempdir().unwrap();
    let mut orch = common::orchestrator(&config, dir.path(), false);
    let mut best = orch.best().unwrap().reward;
    while !orch.is_finished() {
        orch.step_epoch().unwrap();
        assert!(orch.state().forest.len() <= 2);
        let now = orch.best().unwrap().reward;
        assert!(now >= best, "best fell from {best} to {now}");
        best = now;
    }
    let kinds = kinds(&orch);
    assert!(kinds.iter().any(|k| k == "redesign"), "no admitted redesign in {kinds:?}");
    assert!(kinds.iter().any(|k| k == "prune_forest"), "no eviction in {kinds:?}");
}

#[test]
fn plateau_triggers_redesign_and_summaries_accumulate() {
    let mut config = common::config(
        testbed::BIMODAL_2D,
        8,
        60,
        r#""macro": {"plateau": 3, "diversity": 0.0, "cooldown": 5, "summarize_interval": 5},
           "modes": {"warmup_epochs": 2}"#,
    );
    config.forest_capacity = 4;
    let dir = tempfile::tempdir().unwrap();
    let mut orch = common::orchestrator(&config, dir.path(), false);
    orch.run().unwrap();
    let kinds = kinds(&orch);
    let redesigns = kinds.iter().filter(|k| k.starts_with("redesign")).count();
    assert!(redesigns > 0, "no redesign attempt in {kinds:?}");
    assert!(kinds.iter().any(|k| k == "summary"), "no summary in {kinds:?}");
    assert!(!orch.state().summaries.is_empty());
    assert!(orch.state().forest.len() <= 4);
    let trace = &orch.state().best_trace;
    assert!(trace.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn recorded_responses_replay_to_the_same_forest() {
    let config = common::config(testbed::QUADRATIC_1D, 13, 10, CLIMB_SAMPLING);
    let dir = tempfile::tempdir().unwrap();
    let recorder = Arc::new(RecordingBackend::new(climber()));
    let mut runtime = common::runtime(&config, dir.path());
    runtime.backends = AgentBackends::uniform(Arc::clone(&recorder) as Arc<dyn CompletionBackend>);
    let mut orch = Orchestrator::new(config.clone(), runtime, None).unwrap();
    orch.run().unwrap();
    let script = dir.path().join("script.jsonl");
    recorder.write_jsonl(&script).unwrap();

    let mut replay_config = config.clone();
    replay_config.backends.default = BackendSpec::Replay { path: script, mode: ReplayMode::Sequential };
    let mut replayed = common::orchestrator(&replay_config, dir.path(), false);
    replayed.run().unwrap();
    assert_eq!(forest_sexpr(&replayed.state().forest, true), forest_sexpr(&orch.state().forest, true));
}

#[test]
fn injected_failures_are_repaired_or_recorded() {
    let mut config = common::config(testbed::QUADRATIC_1D, 17, 12, "");
    config.backends.default = serde_json::from_str(
        r#"{"kind": "hill_climber",
            "failures": {"period": 2, "offset": 0, "failing_attempts": 2, "kinds": ["crash", "malformed", "constraint"]}}"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut orch = common::orchestrator(&config, dir.path(), false);
    orch.run().unwrap();
    let repaired = orch
        .state()
        .forest
        .trees
        .values()
        .flat_map(|t| t.nodes.values())
        .filter(|n| n.metrics.get("debug_attempts") == Some(&2.0))
        .count();
    assert!(repaired > 0, "no node needed two repairs");

    let mut config = common::config(testbed::QUADRATIC_1D, 17, 6, "");
    config.backends.default = serde_json::from_str(
        r#"{"kind": "hill_climber", "failures": {"period": 1, "offset": 0, "failing_attempts": 9, "kinds": ["crash"]}}"#,
    )
    .unwrap();
    let mut orch = common::orchestrator(&config, dir.path(), false);
    orch.run().unwrap();
    let kinds = kinds(&orch);
    assert_eq!(kinds.iter().filter(|k| *k == "failed_child").count(), 6);
    let trace = &orch.state().best_trace;
    assert!(trace.iter().all(|b| *b == trace[0]), "best changed without a successful child: {trace:?}");
}
