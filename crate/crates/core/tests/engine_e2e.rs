use std::sync::Arc;
use std::time::Instant;

use explainer_core::clock::LogicalClock;
use explainer_core::config::EngineConfig;
use explainer_core::context_prompt::{TemplateRegistry, DEFAULT_TEMPLATE_ID};
use explainer_core::engine::{AskError, Engine};
use explainer_core::eval::{questions_for, run_eval, USER_QUESTIONS};
use explainer_core::llm_backend::{BackendKind, MockBackend};
use explainer_core::log_model::LogRecord;
use explainer_core::scenario_sim::{generate, replay, ReplayRate, Run, ScenarioSpec};
use explainer_core::vector_store::RetrievalParams;

fn engine() -> Engine {
    Engine::new(EngineConfig::default()).unwrap()
}

fn loaded(run: Run) -> Engine {
    let e = engine();
    replay(
        &generate(&ScenarioSpec::new(run, 7)).unwrap(),
        &e,
        ReplayRate::Max,
    )
    .unwrap();
    e
}

#[test]
fn uq1_context_names_the_waypoints() {
    for run in [Run::R1, Run::R4] {
        let e = loaded(run);
        let res = e
            .ask(USER_QUESTIONS[0], &RetrievalParams::default())
            .unwrap();
        assert!(
            res.context
                .lines()
                .any(|l| l.ends_with("] The waypoints received are: 9 6 7")),
            "{run}: {}",
            res.context.rendered
        );
        let prompt = TemplateRegistry::new()
            .build_prompt(DEFAULT_TEMPLATE_ID, res.context.clone(), USER_QUESTIONS[0])
            .unwrap();
        assert_eq!(res.answer, MockBackend::answer_for(&prompt));
    }
}

#[test]
fn ask_before_ingest_is_empty_store() {
    let e = engine();
    assert!(matches!(
        e.ask("what happened?", &RetrievalParams::default()),
        Err(AskError::EmptyStore)
    ));
    assert!(matches!(
        e.ask("  ", &RetrievalParams::default()),
        Err(AskError::EmptyQuestion)
    ));
}

#[test]
fn context_is_capped_by_k_and_store_size() {
    let e = engine();
    for (i, m) in ["a one", "b two", "c three"].iter().enumerate() {
        e.ingest_record(LogRecord::new(i as u64, *m)).unwrap();
    }
    let res = e
        .ask("two", &RetrievalParams::new(20, 0.5).unwrap())
        .unwrap();
    assert_eq!(res.context.len(), 3);
    let res = e
        .ask("two", &RetrievalParams::new(1, 0.5).unwrap())
        .unwrap();
    assert_eq!(res.context.rendered, "[1970-01-01T00:00:00.000Z] b two");
}

#[test]
fn reset_starts_a_fresh_session() {
    let e = loaded(Run::R1);
    let before = e.session_id();
    e.ask(USER_QUESTIONS[0], &RetrievalParams::default())
        .unwrap();
    e.reset();
    assert_ne!(e.session_id(), before);
    assert_eq!(e.report().questions.len(), 0);
    assert_eq!(e.stats().received, 0);
    assert!(matches!(
        e.ask("x", &RetrievalParams::default()),
        Err(AskError::EmptyStore)
    ));
}

#[test]
fn backend_failure_keeps_context() {
    let mut cfg = EngineConfig::default();
    cfg.backend.kind = BackendKind::Http;
    // Port 9 (discard) is closed in the sandbox; connection is refused immediately.
    cfg.backend.endpoint_url = "http://127.0.0.1:9".into();
    cfg.backend.retries = 0;
    cfg.backend.timeout = 2.0;
    let e = Engine::new(cfg).unwrap();
    e.ingest_record(LogRecord::new(1, "Waiting for a new waypoint..."))
        .unwrap();
    match e.ask("what is the robot doing?", &RetrievalParams::default()) {
        Err(AskError::Backend { partial, .. }) => {
            assert_eq!(partial.context.len(), 1);
            assert!(partial.answer.is_empty());
            assert!(partial.error.is_some());
        }
        other => panic!("expected backend failure, got {other:?}"),
    }
    let report = e.report();
    assert_eq!(report.questions.len(), 1);
    assert!(report.questions[0].error.is_some());
}

#[test]
fn eval_report_is_byte_stable_under_logical_clock() {
    let render = || {
        let spec = ScenarioSpec::new(Run::R4, 7);
        let e = Engine::with_clock(
            EngineConfig::default(),
            Arc::new(LogicalClock::default()),
            spec.session_label(),
        )
        .unwrap();
        serde_json::to_string_pretty(&run_eval(&e, &spec, &questions_for(&spec)).unwrap()).unwrap()
    };
    let a = render();
    assert_eq!(a, render());
    assert!(a.contains("\"session_id\": \"R4-seed7-1\""));
}

#[test]
fn replay_is_paced() {
    let e = engine();
    let mut corpus = generate(&ScenarioSpec::new(Run::R1, 7)).unwrap();
    corpus.records.truncate(20);
    let t0 = Instant::now();
    let reported = replay(&corpus, &e, ReplayRate::PerSecond(10.0)).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    assert!((1.9..2.3).contains(&wall), "wall {wall}");
    assert!((reported - wall).abs() < 0.05);
    assert!((e.report().execution_time - reported).abs() < 1e-9);
}
