//! Deterministic navigation-benchmark log traces.
//!
//! A run visits each waypoint in order and emits the enhanced navigation
//! messages plus planner/controller chatter, including floods of
//! `Passing new path to controller.`. Run variants:
//!
//! | run | events                                                             |
//! |-----|--------------------------------------------------------------------|
//! | R1  | no obstacles                                                       |
//! | R2  | one small obstacle (0.05–0.20 m distance increase) per later waypoint |
//! | R3  | one large obstacle (1–15 m increase) per later waypoint            |
//! | R4  | route blocked on one waypoint: obstacles, empty path, replanning   |
//! | R5  | route blocked on the first waypoint, planning fails, navigation aborts |
//!
//! Output depends only on the [`ScenarioSpec`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Engine;
use crate::ingest::IngestError;
use crate::log_model::{Level, LogCorpus, LogRecord};

pub const DEFAULT_WAYPOINTS: [u32; 3] = [9, 6, 7];
pub const DEFAULT_NOISE_REPEAT: usize = 20;
/// 2023-11-14T22:13:20Z.
pub const DEFAULT_BASE_TIMESTAMP: u64 = 1_700_000_000_000_000_000;

pub const NOISE_MESSAGE: &str = "Passing new path to controller.";
pub const COMPLETION_MESSAGE: &str =
    "All the waypoints received have been reached. Navigation task completed.";
pub const LIST_RECEIVED_MESSAGE: &str = "A list of waypoints has been received";
pub const WAITING_MESSAGE: &str = "Waiting for a new waypoint...";
pub const GOAL_RECEIVED_MESSAGE: &str = "Received a goal, begin computing control effort.";
pub const GOAL_CHECKER_WARNING: &str = "No goal checker was specified in parameter 'current_goal_checker'. Server will use only plugin loaded general_goal_checker. This warning will appear once.";
pub const EMPTY_PATH_MESSAGE: &str = "Invalid path, Path is empty.";

/// Regular expressions covering every message the generator can emit.
pub const MESSAGE_PATTERNS: &[&str] = &[
    r"^A list of waypoints has been received$",
    r"^The waypoints received are:( \d+)+$",
    r"^Waypoint with ID: \d+ has been received$",
    r"^Navigating to the waypoint with ID:\d+$",
    r"^Navigation to the waypoint with ID: \d+ is in progress\.$",
    r"^Obstacle detected during navigation to waypoint with ID:\d+ - Distance to the point increased from: \d+\.\d{2} meters to \d+\.\d{2} meters$",
    r"^Navigation to the waypoint with ID: \d+ has succeeded\.$",
    r"^Navigation to the waypoint with ID: \d+ has aborted$",
    r"^Waiting for a new waypoint\.\.\.$",
    r"^All the waypoints received have been reached\. Navigation task completed\.$",
    r"^Passing new path to controller\.$",
    r"^Received a goal, begin computing control effort\.$",
    r"^No goal checker was specified in parameter 'current_goal_checker'\. Server will use only plugin loaded general_goal_checker\. This warning will appear once\.$",
    r"^Begin navigating from current location \(-?\d+\.\d{2}, -?\d+\.\d{2}\) to \(-?\d+\.\d{2}, -?\d+\.\d{2}\)$",
    r#"^GridBased plugin failed to plan calculation to \(-?\d+\.\d{2}, -?\d+\.\d{2}\): "Failed to create plan with tolerance of: 0\.50"$"#,
    r"^Invalid path, Path is empty\.$",
];

const SRC_NAV: &str = "waypoint_navigation";
const SRC_BT: &str = "bt_navigator";
const SRC_CONTROLLER: &str = "controller_server";
const SRC_PLANNER: &str = "planner_server";

const JITTER_MIN_NS: u64 = 50_000_000;
const JITTER_MAX_NS: u64 = 500_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("unknown run `{0}` (expected R1..R5)")]
    UnknownRun(String),
    #[error("scenario needs at least one waypoint")]
    NoWaypoints,
    #[error("invalid replay rate `{0}`")]
    BadRate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Run {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl Run {
    pub const ALL: [Run; 5] = [Run::R1, Run::R2, Run::R3, Run::R4, Run::R5];

    pub fn description(self) -> &'static str {
        match self {
            Run::R1 => "Navigation without any obstacles",
            Run::R2 => "Navigation encountering small obstacles",
            Run::R3 => "Navigation with large obstacles in the path",
            Run::R4 => "Navigation facing a complete route blockage",
            Run::R5 => "Navigation with a blocked route where replanning is not an option",
        }
    }
}

impl fmt::Display for Run {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Run {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Run::ALL
            .into_iter()
            .find(|r| r.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ScenarioError::UnknownRun(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub run: Run,
    pub waypoints: Vec<u32>,
    pub seed: u64,
    pub noise_repeat: usize,
    pub base_timestamp: u64,
}

impl ScenarioSpec {
    pub fn new(run: Run, seed: u64) -> Self {
        Self {
            run,
            waypoints: DEFAULT_WAYPOINTS.to_vec(),
            seed,
            noise_repeat: DEFAULT_NOISE_REPEAT,
            base_timestamp: DEFAULT_BASE_TIMESTAMP,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.waypoints.is_empty() {
            return Err(ScenarioError::NoWaypoints);
        }
        Ok(())
    }

    /// The waypoint where the run's notable event happens: the blocked one
    /// for R5, otherwise the second waypoint (the first if there is only one).
    pub fn focus_waypoint(&self) -> u32 {
        match self.run {
            Run::R5 => self.waypoints[0],
            _ => *self.waypoints.get(1).unwrap_or(&self.waypoints[0]),
        }
    }

    pub fn session_label(&self) -> String {
        format!("{}-seed{}", self.run, self.seed)
    }
}

#[derive(Debug, Clone, Copy)]
enum ObstacleSize {
    Small,
    Large,
}

struct Emitter {
    rng: ChaCha8Rng,
    next_ts: u64,
    noise_repeat: usize,
    records: Vec<LogRecord>,
}

impl Emitter {
    fn emit(&mut self, src: &str, level: Level, msg: String) {
        self.records.push(
            LogRecord::new(self.next_ts, msg)
                .with_source(src)
                .with_level(level),
        );
        self.next_ts += self.rng.gen_range(JITTER_MIN_NS..=JITTER_MAX_NS);
    }

    fn nav(&mut self, msg: String) {
        self.emit(SRC_NAV, Level::Info, msg);
    }

    fn noise_burst(&mut self) {
        for _ in 0..self.noise_repeat {
            self.emit(SRC_CONTROLLER, Level::Info, NOISE_MESSAGE.to_string());
        }
    }

    /// Distance pair in centimetres, `to > from`.
    fn distances(&mut self, size: ObstacleSize, from: Option<u32>) -> (u32, u32) {
        let (start, delta) = match size {
            ObstacleSize::Small => (5..=30, 5..=20),
            ObstacleSize::Large => (100..=800, 100..=1500),
        };
        let from = from.unwrap_or_else(|| self.rng.gen_range(start));
        (from, from + self.rng.gen_range(delta))
    }

    fn obstacle(&mut self, id: u32, from_cm: u32, to_cm: u32) {
        self.emit(
            SRC_NAV,
            Level::Warn,
            format!(
                "Obstacle detected during navigation to waypoint with ID:{id} - Distance to the point increased from: {} meters to {} meters",
                meters(from_cm),
                meters(to_cm)
            ),
        );
    }

    fn begin_navigating(&mut self, from: (i32, i32), to: (i32, i32)) {
        self.emit(
            SRC_BT,
            Level::Info,
            format!(
                "Begin navigating from current location ({}, {}) to ({}, {})",
                coord(from.0),
                coord(from.1),
                coord(to.0),
                coord(to.1)
            ),
        );
    }
}

fn meters(cm: u32) -> String {
    format!("{}.{:02}", cm / 100, cm % 100)
}

/// Coordinates are kept in centimetres to make formatting exact.
fn coord(cm: i32) -> String {
    let sign = if cm < 0 { "-" } else { "" };
    let a = cm.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

/// Produce the log trace for `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<LogCorpus, ScenarioError> {
    spec.validate()?;
    let mut em = Emitter {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        next_ts: spec.base_timestamp,
        noise_repeat: spec.noise_repeat,
        records: Vec::new(),
    };
    let targets: Vec<(i32, i32)> = spec
        .waypoints
        .iter()
        .map(|_| {
            (
                em.rng.gen_range(-3500..=2000),
                em.rng.gen_range(-3500..=2000),
            )
        })
        .collect();

    em.nav(LIST_RECEIVED_MESSAGE.to_string());
    let ids = spec
        .waypoints
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    em.nav(format!("The waypoints received are: {ids}"));

    let focus = spec.focus_waypoint();
    let mut position = (0, 0);
    let mut completed = true;
    for (idx, (&id, &target)) in spec.waypoints.iter().zip(&targets).enumerate() {
        em.nav(format!("Waypoint with ID: {id} has been received"));
        em.nav(format!("Navigating to the waypoint with ID:{id}"));
        em.begin_navigating(position, target);
        em.emit(
            SRC_CONTROLLER,
            Level::Info,
            GOAL_RECEIVED_MESSAGE.to_string(),
        );
        if idx == 0 {
            em.emit(
                SRC_CONTROLLER,
                Level::Warn,
                GOAL_CHECKER_WARNING.to_string(),
            );
        }
        em.nav(format!(
            "Navigation to the waypoint with ID: {id} is in progress."
        ));
        em.noise_burst();

        match spec.run {
            Run::R1 => {}
            Run::R2 | Run::R3 if idx > 0 => {
                let size = if spec.run == Run::R2 {
                    ObstacleSize::Small
                } else {
                    ObstacleSize::Large
                };
                let (a, b) = em.distances(size, None);
                em.obstacle(id, a, b);
                em.noise_burst();
            }
            Run::R2 | Run::R3 => {}
            Run::R4 if id == focus => {
                let (a, b) = em.distances(ObstacleSize::Large, None);
                em.obstacle(id, a, b);
                let (_, c) = em.distances(ObstacleSize::Large, Some(b));
                em.obstacle(id, b, c);
                em.emit(SRC_CONTROLLER, Level::Error, EMPTY_PATH_MESSAGE.to_string());
                let detour = (
                    (position.0 + target.0) / 2 + em.rng.gen_range(-300..=300),
                    (position.1 + target.1) / 2 + em.rng.gen_range(-300..=300),
                );
                em.begin_navigating(detour, target);
                em.emit(
                    SRC_CONTROLLER,
                    Level::Info,
                    GOAL_RECEIVED_MESSAGE.to_string(),
                );
                em.noise_burst();
            }
            Run::R4 => {}
            Run::R5 => {
                let cycles = em.rng.gen_range(3..=5);
                let mut from = None;
                for _ in 0..cycles {
                    let (a, b) = em.distances(ObstacleSize::Large, from);
                    em.obstacle(id, a, b);
                    from = Some(b);
                    em.emit(
                        SRC_PLANNER,
                        Level::Warn,
                        format!(
                            "GridBased plugin failed to plan calculation to ({}, {}): \"Failed to create plan with tolerance of: 0.50\"",
                            coord(target.0),
                            coord(target.1)
                        ),
                    );
                    em.emit(SRC_CONTROLLER, Level::Error, EMPTY_PATH_MESSAGE.to_string());
                    em.noise_burst();
                }
                em.emit(
                    SRC_NAV,
                    Level::Error,
                    format!("Navigation to the waypoint with ID: {id} has aborted"),
                );
                em.nav(WAITING_MESSAGE.to_string());
                completed = false;
                break;
            }
        }

        em.nav(format!(
            "Navigation to the waypoint with ID: {id} has succeeded."
        ));
        em.nav(WAITING_MESSAGE.to_string());
        position = target;
    }
    if completed {
        em.nav(COMPLETION_MESSAGE.to_string());
    }

    Ok(LogCorpus::new(spec.session_label(), em.records))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplayRate {
    Max,
    PerSecond(f64),
}

impl FromStr for ReplayRate {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(ReplayRate::Max);
        }
        match s.parse::<f64>() {
            Ok(r) if r.is_finite() && r > 0.0 => Ok(ReplayRate::PerSecond(r)),
            _ => Err(ScenarioError::BadRate(s.to_string())),
        }
    }
}

/// Submit the corpus to `engine` in order, paced at `rate`, and add the
/// elapsed time (seconds, engine clock) to the session's execution time.
pub fn replay(corpus: &LogCorpus, engine: &Engine, rate: ReplayRate) -> Result<f64, IngestError> {
    let clock = engine.clock().clone();
    let start = clock.now();
    for (i, record) in corpus.records.iter().enumerate() {
        if let ReplayRate::PerSecond(r) = rate {
            clock.sleep_until(start + std::time::Duration::from_secs_f64(i as f64 / r));
        }
        engine.ingest_record(record.clone())?;
    }
    if let ReplayRate::PerSecond(r) = rate {
        clock.sleep_until(start + std::time::Duration::from_secs_f64(corpus.len() as f64 / r));
    }
    let elapsed = (clock.now() - start).as_secs_f64();
    engine.add_execution_time(elapsed);
    Ok(elapsed)
}
