use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use explainer_core::clock::{Clock, LogicalClock, WallClock};
use explainer_core::embedder::EmbedderKind;
use explainer_core::engine::{AskError, Engine, ExplanationResult};
use explainer_core::eval::{run_eval, user_questions, EvalError};
use explainer_core::ingest::IngestError;
use explainer_core::llm_backend::BackendKind;
use explainer_core::log_model::{read_jsonl, CorpusReadError, LogRecord};
use explainer_core::scenario_sim::{generate, ScenarioSpec};
use explainer_core::vector_store::{RetrievalParams, VectorStore};
use thiserror::Error;

use crate::config_file::{ConfigFile, ConfigFileError};
use crate::{
    AskArgs, Cli, ClockArg, Command, EvalArgs, GenerateArgs, IngestArgs, ReplArgs, RetrievalArgs,
    ScenarioArgs, ServeArgs,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error("no logs have been ingested yet; run `explainer ingest` first")]
    EmptyStore,
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("{0} question(s) failed at the backend; report written with context only")]
    EvalBackend(usize),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::EmptyStore => 3,
            CliError::Backend(_) => 4,
            CliError::Io { .. }
            | CliError::Input(_)
            | CliError::EvalBackend(_)
            | CliError::Failed(_) => 1,
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Failed(e.to_string())
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = || ConfigFile::resolve(cli.config.as_deref());
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Ingest(args) => cmd_ingest(&config()?, args),
        Command::Ask(args) => cmd_ask(&config()?, args),
        Command::Repl(args) => cmd_repl(&config()?, args),
        Command::Eval(args) => cmd_eval(&config()?, args),
        Command::Serve(args) => cmd_serve(&config()?, args),
    }
}

fn scenario(args: &ScenarioArgs) -> Result<ScenarioSpec, CliError> {
    let spec = ScenarioSpec {
        waypoints: args.waypoints.clone(),
        noise_repeat: args.noise_repeat,
        ..ScenarioSpec::new(args.run.into(), args.seed)
    };
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
fn write_atomically(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let context = format!("cannot write {}", path.display());
    let tmp = PathBuf::from(format!("{}.tmp", path.display()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(CliError::io(context))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let spec = scenario(&args.scenario)?;
    let corpus = generate(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    write_atomically(&args.out, |w| corpus.write_jsonl(w))?;
    eprintln!("wrote {} records to {}", corpus.len(), args.out.display());
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<LogRecord>, CliError> {
    let file = File::open(path).map_err(CliError::io(format!("cannot open {}", path.display())))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        CorpusReadError::Io(source) => CliError::Io {
            context: format!("cannot read {}", path.display()),
            source,
        },
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}

fn load_state(path: &Path) -> Result<Option<VectorStore>, CliError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => {
            return Err(CliError::io(format!(
                "cannot open state {}",
                path.display()
            ))(e))
        }
    };
    VectorStore::load(BufReader::new(file))
        .map(Some)
        .map_err(|e| CliError::Input(format!("state {}: {e}", path.display())))
}

/// An engine over the persisted session state (empty if there is none).
fn stateful_engine(config: &ConfigFile, state: &Path) -> Result<Engine, CliError> {
    let engine = Engine::new(config.engine.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(store) = load_state(state)? {
        match store.dim() {
            Some(dim) if dim != config.engine.embedder.dim => {
                return Err(CliError::Input(format!(
                    "state {} was built with embedding dim {dim}, config says {}; re-ingest or remove it",
                    state.display(),
                    config.engine.embedder.dim
                )))
            }
            _ => engine.restore(store),
        }
    }
    Ok(engine)
}

fn cmd_ingest(config: &ConfigFile, args: IngestArgs) -> Result<(), CliError> {
    let records = read_records(&args.file)?;
    let engine = stateful_engine(config, &args.state.state)?;
    let out = engine.ingest_batch(records)?;
    engine.drain()?;
    let store = engine.store();
    write_atomically(&args.state.state, |w| store.dump(w))?;
    println!(
        "received {} accepted {} deduplicated {} (store size {})",
        out.received,
        out.accepted,
        out.deduplicated,
        store.size()
    );
    Ok(())
}

fn retrieval_params(
    config: &ConfigFile,
    args: &RetrievalArgs,
) -> Result<RetrievalParams, CliError> {
    let defaults = config.engine.retrieval;
    RetrievalParams::new(
        args.k.map_or(defaults.k, |k| k as usize),
        args.lambda.unwrap_or(defaults.lambda),
    )
    .map_err(|e| CliError::Usage(e.to_string()))
}

fn print_context(out: &mut impl Write, res: &ExplanationResult) -> std::io::Result<()> {
    writeln!(out, "--- context ({} lines) ---", res.context.len())?;
    for line in res.context.lines() {
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn print_result(out: &mut impl Write, res: &ExplanationResult) -> std::io::Result<()> {
    writeln!(out, "{}", res.answer)?;
    print_context(out, res)?;
    writeln!(out, "--- timings ---")?;
    writeln!(out, "question_time_s: {:.6}", res.question_time)?;
    writeln!(out, "backend_latency_s: {:.6}", res.backend_latency)
}

/// Ask and print; a backend failure still prints the retrieved context.
fn ask_and_print(
    engine: &Engine,
    question: &str,
    params: &RetrievalParams,
) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let io = CliError::io("cannot write to stdout");
    match engine.ask(question, params) {
        Ok(res) => print_result(&mut out, &res).map_err(io),
        Err(AskError::Backend { error, partial }) => {
            print_context(&mut out, &partial).map_err(io)?;
            Err(CliError::Backend(error.to_string()))
        }
        Err(AskError::EmptyStore) => Err(CliError::EmptyStore),
        Err(e @ (AskError::EmptyQuestion | AskError::InvalidParams(_))) => {
            Err(CliError::Usage(e.to_string()))
        }
        Err(e) => Err(CliError::Failed(e.to_string())),
    }
}

fn cmd_ask(config: &ConfigFile, args: AskArgs) -> Result<(), CliError> {
    let params = retrieval_params(config, &args.retrieval)?;
    let engine = stateful_engine(config, &args.state.state)?;
    ask_and_print(&engine, &args.question, &params)
}

fn cmd_repl(config: &ConfigFile, args: ReplArgs) -> Result<(), CliError> {
    let params = retrieval_params(config, &args.retrieval)?;
    let engine = stateful_engine(config, &args.state.state)?;
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    let prompt = || {
        if interactive {
            eprint!("> ");
            let _ = std::io::stderr().flush();
        }
    };
    prompt();
    for line in stdin.lock().lines() {
        let line = line.map_err(CliError::io("cannot read stdin"))?;
        let question = line.trim();
        if !question.is_empty() {
            if let Err(e) = ask_and_print(&engine, question, &params) {
                eprintln!("error: {e}");
            }
            println!();
        }
        prompt();
    }
    Ok(())
}

fn read_questions(path: &Path, waypoint: u32) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(CliError::io(format!("cannot read {}", path.display())))?;
    let questions: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|q| q.replace("ID X", &format!("ID {waypoint}")))
        .collect();
    if questions.is_empty() {
        return Err(CliError::Input(format!("{}: no questions", path.display())));
    }
    Ok(questions)
}

fn cmd_eval(config: &ConfigFile, args: EvalArgs) -> Result<(), CliError> {
    let spec = scenario(&args.scenario)?;
    let waypoint = args.waypoint_id.unwrap_or_else(|| spec.focus_waypoint());
    let questions = match &args.questions {
        Some(path) => read_questions(path, waypoint)?,
        None => user_questions(waypoint),
    };
    let deterministic = config.engine.embedder.kind == EmbedderKind::Reference
        && config.engine.backend.kind == BackendKind::Mock;
    let clock: Arc<dyn Clock> = match args.clock {
        ClockArg::Logical => Arc::new(LogicalClock::default()),
        ClockArg::Auto if deterministic => Arc::new(LogicalClock::default()),
        ClockArg::Auto | ClockArg::Wall => Arc::new(WallClock::new()),
    };
    let engine = Engine::with_clock(config.engine.clone(), clock, spec.session_label())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let report = run_eval(&engine, &spec, &questions).map_err(|e| match e {
        EvalError::Scenario(e) => CliError::Usage(e.to_string()),
        other => CliError::Failed(other.to_string()),
    })?;

    if let Some(path) = &args.report {
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Failed(e.to_string()))?;
        write_atomically(path, |w| writeln!(w, "{json}"))?;
    }
    let table = report.to_table();
    if let Some(path) = &args.table {
        write_atomically(path, |w| w.write_all(table.as_bytes()))?;
    }
    print!("{table}");
    if report.backend_failures > 0 {
        return Err(CliError::EvalBackend(report.backend_failures));
    }
    Ok(())
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
    tracing::info!("shutdown requested");
}

fn cmd_serve(config: &ConfigFile, args: ServeArgs) -> Result<(), CliError> {
    let engine = Arc::new(
        Engine::with_clock(config.engine.clone(), Arc::new(WallClock::new()), "serve")
            .map_err(|e| CliError::Usage(e.to_string()))?,
    );
    if let Some(file) = &args.file {
        let out = engine.ingest_batch(read_records(file)?)?;
        eprintln!(
            "ingested {} records ({} accepted)",
            out.received, out.accepted
        );
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::io("cannot start runtime"))?;
    let addr = format!("{}:{}", args.bind, args.port);
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(CliError::io(format!("cannot listen on {addr}")))?;
        let local = listener
            .local_addr()
            .map_err(CliError::io("cannot read local address"))?;
        eprintln!("listening on http://{local}");
        explainer_service::serve(listener, engine.clone(), &config.service, shutdown_signal())
            .await
            .map_err(CliError::io("server failed"))
    });
    drop(runtime);
    result
}
