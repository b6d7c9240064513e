//! The user-question evaluation harness: generate a run, replay it, ask the
//! question set and collect the session report.

use serde::Serialize;
use thiserror::Error;

use crate::engine::{AskError, Engine, SessionReport};
use crate::ingest::IngestError;
use crate::scenario_sim::{self, ReplayRate, Run, ScenarioError, ScenarioSpec, COMPLETION_MESSAGE};

/// The eight canonical user questions; `X` is the waypoint placeholder.
pub const USER_QUESTIONS: [&str; 8] = [
    "How many waypoints were received during the navigation task?",
    "Which were the IDs of the waypoints received during the navigation task?",
    "Were all the waypoints received successfully reached?",
    "What happened during navigation to waypoint with ID X?",
    "Why was the route replanned during navigation to waypoint with ID X?",
    "Have any relevant events occurred during navigation?",
    "What is the task that the robot had to perform?",
    "Did the robot avoid any obstacles during the navigation?",
];

/// Instantiate the user questions for one waypoint id.
pub fn user_questions(waypoint: u32) -> Vec<String> {
    USER_QUESTIONS
        .iter()
        .map(|q| q.replace("ID X", &format!("ID {waypoint}")))
        .collect()
}

/// Question set for a scenario: the placeholder becomes its focus waypoint.
pub fn questions_for(spec: &ScenarioSpec) -> Vec<String> {
    user_questions(spec.focus_waypoint())
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Ask(#[from] AskError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub run: Run,
    pub run_description: &'static str,
    pub seed: u64,
    pub waypoints: Vec<u32>,
    pub noise_repeat: usize,
    /// Whether the trace contains the task-completion line.
    pub completion_logged: bool,
    /// Waypoints whose navigation was logged as aborted.
    pub aborted_waypoints: Vec<u32>,
    pub backend_failures: usize,
    pub session: SessionReport,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let aborted = if self.aborted_waypoints.is_empty() {
            "none".to_string()
        } else {
            self.aborted_waypoints
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "Run {} ({}), seed {}\nTask completion logged: {}\nAborted waypoints: {}\n\n{}",
            self.run,
            self.run_description,
            self.seed,
            if self.completion_logged { "yes" } else { "no" },
            aborted,
            self.session.to_table(&self.run.to_string())
        )
    }
}

/// Generate, replay at full speed, drain, then ask every question.
///
/// Backend failures do not abort the run; they are counted and the
/// context-only entries stay in the report.
pub fn run_eval(
    engine: &Engine,
    spec: &ScenarioSpec,
    questions: &[String],
) -> Result<EvalReport, EvalError> {
    let corpus = scenario_sim::generate(spec)?;
    scenario_sim::replay(&corpus, engine, ReplayRate::Max)?;
    engine.drain()?;

    let mut backend_failures = 0;
    let params = engine.config().retrieval;
    for q in questions {
        match engine.ask(q, &params) {
            Ok(_) => {}
            Err(AskError::Backend { error, .. }) => {
                tracing::warn!(question = %q, %error, "backend failed");
                backend_failures += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }

    let completion_logged = corpus
        .records
        .iter()
        .any(|r| r.message == COMPLETION_MESSAGE);
    let aborted_waypoints = corpus
        .records
        .iter()
        .filter_map(|r| {
            r.message
                .strip_prefix("Navigation to the waypoint with ID: ")?
                .strip_suffix(" has aborted")?
                .parse()
                .ok()
        })
        .collect();

    Ok(EvalReport {
        run: spec.run,
        run_description: spec.run.description(),
        seed: spec.seed,
        waypoints: spec.waypoints.clone(),
        noise_repeat: spec.noise_repeat,
        completion_logged,
        aborted_waypoints,
        backend_failures,
        session: engine.report(),
    })
}
