//! `explainer`: generate navigation traces, ingest logs, ask questions, run
//! the user-question evaluation and serve the HTTP API.

mod commands;
mod config_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use explainer_core::scenario_sim::Run;

#[derive(Debug, Parser)]
#[command(
    name = "explainer",
    version,
    about = "Explain robot behaviour from its logs"
)]
struct Cli {
    /// Config file (TOML). Defaults to ./explainer.toml when present.
    #[arg(long, global = true, env = "EXPLAINER_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a simulated navigation trace as JSONL.
    Generate(GenerateArgs),
    /// Ingest a JSONL log file into the persisted session state.
    Ingest(IngestArgs),
    /// Ask one question about the ingested logs.
    Ask(AskArgs),
    /// Read questions from stdin, one per line, and answer each.
    Repl(ReplArgs),
    /// Generate a run, replay it and ask the user-question set.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "SCREAMING_SNAKE_CASE")]
enum RunArg {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl From<RunArg> for Run {
    fn from(r: RunArg) -> Self {
        match r {
            RunArg::R1 => Run::R1,
            RunArg::R2 => Run::R2,
            RunArg::R3 => Run::R3,
            RunArg::R4 => Run::R4,
            RunArg::R5 => Run::R5,
        }
    }
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long, value_enum, ignore_case = true)]
    run: RunArg,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Waypoint ids, in navigation order.
    #[arg(long, value_delimiter = ',', default_values_t = explainer_core::scenario_sim::DEFAULT_WAYPOINTS)]
    waypoints: Vec<u32>,
    /// Length of each planner-noise burst.
    #[arg(long, default_value_t = explainer_core::scenario_sim::DEFAULT_NOISE_REPEAT, value_parser = clap::value_parser!(usize))]
    noise_repeat: usize,
}

#[derive(Debug, Args)]
struct StateArg {
    /// Session state file shared by `ingest`, `ask` and `repl`.
    #[arg(long, env = "EXPLAINER_STATE", default_value = "explainer-state.jsonl")]
    state: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    file: PathBuf,
    #[command(flatten)]
    state: StateArg,
}

#[derive(Debug, Args)]
struct RetrievalArgs {
    /// Number of context lines to retrieve (config default if omitted).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Relevance/diversity trade-off in [0, 1] (config default if omitted).
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct AskArgs {
    #[arg(long)]
    question: String,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    state: StateArg,
}

#[derive(Debug, Args)]
struct ReplArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    state: StateArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClockArg {
    /// Logical when embedder and backend are both deterministic, else wall.
    Auto,
    Wall,
    Logical,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Question file, one per line; defaults to UQ1–UQ8.
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Waypoint id substituted for "ID X" (defaults to the run's focus waypoint).
    #[arg(long)]
    waypoint_id: Option<u32>,
    /// Write the session report JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the plain-text table here (it is always printed to stdout).
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClockArg::Auto)]
    clock: ClockArg,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// JSONL file to ingest before serving.
    #[arg(long)]
    file: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();

    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
