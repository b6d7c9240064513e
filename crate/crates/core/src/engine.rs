//! One explanation session: ingestion, embedding, retrieval, prompting and
//! answering, plus the run metrics.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::clock::{Clock, WallClock};
use crate::config::{ConfigError, EngineConfig};
use crate::context_prompt::{
    format_timestamp, order_context, ContextSet, PromptError, TemplateRegistry,
};
use crate::embedder::{EmbedError, Embedder};
use crate::ingest::{IngestError, IngestStats, Ingestor};
use crate::llm_backend::{BackendError, LlmBackend};
use crate::log_model::LogRecord;
use crate::vector_store::{RetrievalParams, StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum AskError {
    #[error("no logs have been ingested")]
    EmptyStore,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("invalid retrieval params: {0}")]
    InvalidParams(String),
    #[error("ingestion: {0}")]
    Ingest(#[from] IngestError),
    #[error("embedding the question: {0}")]
    Embed(#[from] EmbedError),
    #[error("retrieval: {0}")]
    Retrieval(StoreError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    /// The backend failed after the context was built; `partial` carries it.
    #[error("backend: {error}")]
    Backend {
        error: BackendError,
        partial: Box<ExplanationResult>,
    },
}

/// One answered (or attempted) question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationResult {
    pub question: String,
    pub answer: String,
    #[serde(serialize_with = "serialize_context")]
    pub context: ContextSet,
    pub retrieval_params: RetrievalParams,
    /// Seconds: retrieval, prompt build and completion.
    pub question_time: f64,
    /// Seconds spent in the backend call.
    pub backend_latency: f64,
    /// Store size at retrieval time.
    pub indexed_records: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Serialize)]
struct ContextLine<'a> {
    id: u64,
    ts: u64,
    ts_iso: String,
    src: &'a str,
    lvl: &'a str,
    msg: &'a str,
}

// Vectors are omitted from reports.
fn serialize_context<S: Serializer>(ctx: &ContextSet, s: S) -> Result<S::Ok, S::Error> {
    let lines: Vec<ContextLine<'_>> = ctx
        .entries
        .iter()
        .map(|e| ContextLine {
            id: e.id,
            ts: e.record.timestamp,
            ts_iso: format_timestamp(e.record.timestamp),
            src: &e.record.source,
            lvl: e.record.level.as_str(),
            msg: &e.record.message,
        })
        .collect();
    let mut st = s.serialize_struct("ContextSet", 2)?;
    st.serialize_field("entries", &lines)?;
    st.serialize_field("rendered", &ctx.rendered)?;
    st.end()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub session_id: String,
    /// Seconds of scenario replay; 0 when not driven by the simulator.
    pub execution_time: f64,
    pub ingest: IngestStats,
    pub questions: Vec<ExplanationResult>,
}

impl SessionReport {
    /// Plain-text tables: the per-run log processing row and the per-question
    /// timing row, followed by one line per question.
    pub fn to_table(&self, run_label: &str) -> String {
        let mut out = String::new();
        let s = &self.ingest;
        out.push_str("Log processing\n");
        out.push_str(&align(&[
            vec![
                "Run".into(),
                "Execution Time(s)".into(),
                "Total Logs in Rosout".into(),
                "Deduplicated".into(),
                "Embeddings Processed".into(),
                "Processing Time(s)".into(),
            ],
            vec![
                run_label.into(),
                format!("{:.3}", self.execution_time),
                s.received.to_string(),
                s.deduplicated.to_string(),
                s.processed.to_string(),
                format!("{:.3}", s.processing_time),
            ],
        ]));

        out.push_str("\nQuestion generation time (s)\n");
        let mut header = vec![String::new()];
        let mut row = vec![run_label.to_string()];
        for (i, q) in self.questions.iter().enumerate() {
            header.push(format!("UQ{}", i + 1));
            row.push(format!("{:.2}", q.question_time));
        }
        if self.questions.is_empty() {
            header.push("-".into());
            row.push("-".into());
        }
        out.push_str(&align(&[header, row]));

        if !self.questions.is_empty() {
            out.push('\n');
            for (i, q) in self.questions.iter().enumerate() {
                let status = match &q.error {
                    Some(e) => format!("  [error: {e}]"),
                    None => String::new(),
                };
                let _ = writeln!(
                    out,
                    "UQ{}: {} (question {:.3}s, backend {:.3}s, {} context lines){}",
                    i + 1,
                    q.question,
                    q.question_time,
                    q.backend_latency,
                    q.context.len(),
                    status
                );
            }
        }
        out
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let line = r
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect::<Vec<_>>()
            .join("  ");
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

struct Session {
    id: String,
    ingestor: Ingestor,
    // Submits hold it shared; `ask` holds it exclusively while it drains and retrieves.
    gate: RwLock<()>,
    questions: Mutex<Vec<ExplanationResult>>,
    execution_time: Mutex<f64>,
}

/// Outcome of a batch submit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BatchOutcome {
    pub received: u64,
    pub accepted: u64,
    pub deduplicated: u64,
}

pub struct Engine {
    config: EngineConfig,
    embedder: Arc<dyn Embedder>,
    backend: Arc<dyn LlmBackend>,
    templates: TemplateRegistry,
    clock: Arc<dyn Clock>,
    label: String,
    generation: AtomicU64,
    session: RwLock<Arc<Session>>,
    producer: Mutex<()>,
    asking: Mutex<()>,
    wake: (Mutex<bool>, Condvar),
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("session_id", &self.session_id())
            .field("config", &self.config)
            .finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, ConfigError> {
        Self::with_clock(config, Arc::new(WallClock::new()), "session")
    }

    pub fn with_clock(
        config: EngineConfig,
        clock: Arc<dyn Clock>,
        label: impl Into<String>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let embedder: Arc<dyn Embedder> = Arc::from(config.embedder.build()?);
        let backend: Arc<dyn LlmBackend> = Arc::from(config.backend.build()?);
        Self::from_parts(config, embedder, backend, clock, label)
    }

    /// Assemble from explicit components (custom embedders/backends, tests).
    pub fn from_parts(
        config: EngineConfig,
        embedder: Arc<dyn Embedder>,
        backend: Arc<dyn LlmBackend>,
        clock: Arc<dyn Clock>,
        label: impl Into<String>,
    ) -> Result<Self, ConfigError> {
        config.retrieval.validate()?;
        let templates = config.templates()?;
        let label = label.into();
        let session = Self::new_session(&label, 1, &embedder, Arc::new(VectorStore::new()), &clock);
        Ok(Self {
            config,
            embedder,
            backend,
            templates,
            clock,
            label,
            generation: AtomicU64::new(1),
            session: RwLock::new(Arc::new(session)),
            producer: Mutex::new(()),
            asking: Mutex::new(()),
            wake: (Mutex::new(false), Condvar::new()),
        })
    }

    fn new_session(
        label: &str,
        generation: u64,
        embedder: &Arc<dyn Embedder>,
        store: Arc<VectorStore>,
        clock: &Arc<dyn Clock>,
    ) -> Session {
        Session {
            id: format!("{label}-{generation}"),
            ingestor: Ingestor::new(embedder.clone(), store, clock.clone()),
            gate: RwLock::new(()),
            questions: Mutex::new(Vec::new()),
            execution_time: Mutex::new(0.0),
        }
    }

    fn current(&self) -> Arc<Session> {
        self.session
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn backend(&self) -> &Arc<dyn LlmBackend> {
        &self.backend
    }

    pub fn session_id(&self) -> String {
        self.current().id.clone()
    }

    pub fn store(&self) -> Arc<VectorStore> {
        self.current().ingestor.store().clone()
    }

    pub fn stats(&self) -> IngestStats {
        self.current().ingestor.stats()
    }

    /// Submit one record; returns whether it was queued.
    pub fn ingest_record(&self, record: LogRecord) -> Result<bool, IngestError> {
        let session = self.current();
        let accepted = {
            let _gate = session.gate.read().unwrap_or_else(|e| e.into_inner());
            session.ingestor.submit(record)?
        };
        if accepted {
            self.notify_worker();
        }
        Ok(accepted)
    }

    /// Submit records in order without interleaving with other batches.
    pub fn ingest_batch(&self, records: Vec<LogRecord>) -> Result<BatchOutcome, IngestError> {
        let _producer = self.producer.lock().unwrap_or_else(|e| e.into_inner());
        let mut out = BatchOutcome::default();
        for r in records {
            out.received += 1;
            if self.ingest_record(r)? {
                out.accepted += 1;
            } else {
                out.deduplicated += 1;
            }
        }
        Ok(out)
    }

    pub fn drain_step(&self) -> Result<usize, IngestError> {
        self.current().ingestor.drain_step()
    }

    pub fn drain(&self) -> Result<usize, IngestError> {
        self.current().ingestor.drain()
    }

    pub fn close(&self) {
        self.current().ingestor.close();
    }

    pub fn set_execution_time(&self, seconds: f64) {
        *self
            .current()
            .execution_time
            .lock()
            .unwrap_or_else(|e| e.into_inner()) = seconds;
    }

    pub fn add_execution_time(&self, seconds: f64) {
        *self
            .current()
            .execution_time
            .lock()
            .unwrap_or_else(|e| e.into_inner()) += seconds;
    }

    /// Answer a question from everything submitted so far.
    pub fn ask(
        &self,
        question: &str,
        params: &RetrievalParams,
    ) -> Result<ExplanationResult, AskError> {
        if question.trim().is_empty() {
            return Err(AskError::EmptyQuestion);
        }
        params
            .validate()
            .map_err(|e| AskError::InvalidParams(e.to_string()))?;

        let _asking = self.asking.lock().unwrap_or_else(|e| e.into_inner());
        let session = self.current();
        let start;
        let (prompt, indexed) = {
            let _gate = session.gate.write().unwrap_or_else(|e| e.into_inner());
            session.ingestor.drain()?;
            debug_assert_eq!(session.ingestor.queue_depth(), 0);
            start = self.clock.now();
            let store = session.ingestor.store();
            if store.is_empty() {
                return Err(AskError::EmptyStore);
            }
            let query = self.embedder.embed_query(question)?;
            let hits = store.retrieve(&query, params).map_err(|e| match e {
                StoreError::EmptyStore => AskError::EmptyStore,
                other => AskError::Retrieval(other),
            })?;
            let context = order_context(hits)?;
            let prompt =
                self.templates
                    .build_prompt(&self.config.template_id, context, question)?;
            (prompt, store.size() as u64)
        };

        let backend_start = self.clock.now();
        let completion = self.backend.complete(&prompt);
        let backend_end = self.clock.now();
        let backend_latency = (backend_end - backend_start).as_secs_f64();
        let question_time = (backend_end - start).as_secs_f64();

        let mut result = ExplanationResult {
            question: question.to_string(),
            answer: String::new(),
            context: prompt.context,
            retrieval_params: *params,
            question_time,
            backend_latency,
            indexed_records: indexed,
            error: None,
        };
        let outcome = match completion {
            Ok(c) => {
                result.answer = c.text;
                Ok(result.clone())
            }
            Err(error) => {
                result.error = Some(error.to_string());
                Err(AskError::Backend {
                    error,
                    partial: Box::new(result.clone()),
                })
            }
        };
        session
            .questions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(result);
        outcome
    }

    pub fn report(&self) -> SessionReport {
        let session = self.current();
        let questions = session
            .questions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone();
        let execution_time = *session
            .execution_time
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        SessionReport {
            session_id: session.id.clone(),
            execution_time,
            ingest: session.ingestor.stats(),
            questions,
        }
    }

    /// Start a new empty session with the same configuration.
    pub fn reset(&self) {
        self.replace_store(Arc::new(VectorStore::new()));
    }

    /// Start a new session over an existing store (e.g. one loaded from disk).
    pub fn restore(&self, store: VectorStore) {
        self.replace_store(Arc::new(store));
    }

    fn replace_store(&self, store: Arc<VectorStore>) {
        let _asking = self.asking.lock().unwrap_or_else(|e| e.into_inner());
        let _producer = self.producer.lock().unwrap_or_else(|e| e.into_inner());
        let generation = self.generation.fetch_add(1, Ordering::SeqCst) + 1;
        let session =
            Self::new_session(&self.label, generation, &self.embedder, store, &self.clock);
        *self.session.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(session);
    }

    fn notify_worker(&self) {
        let (flag, cv) = &self.wake;
        *flag.lock().unwrap_or_else(|e| e.into_inner()) = true;
        cv.notify_one();
    }

    /// Background drain worker. Stops when the handle is dropped.
    pub fn spawn_worker(self: &Arc<Self>) -> WorkerHandle {
        let engine = Arc::clone(self);
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name("explainer-drain".into())
            .spawn(move || {
                while !stop_flag.load(Ordering::SeqCst) {
                    if let Err(e) = engine.drain() {
                        tracing::warn!(error = %e, "drain failed; will retry");
                        std::thread::sleep(Duration::from_millis(100));
                        continue;
                    }
                    let (flag, cv) = &engine.wake;
                    let mut pending = flag.lock().unwrap_or_else(|e| e.into_inner());
                    if !*pending {
                        pending = cv
                            .wait_timeout(pending, Duration::from_millis(50))
                            .unwrap_or_else(|e| e.into_inner())
                            .0;
                    }
                    *pending = false;
                }
            })
            .expect("spawn drain worker");
        WorkerHandle {
            stop,
            engine: Arc::clone(self),
            thread: Some(thread),
        }
    }
}

pub struct WorkerHandle {
    stop: Arc<AtomicBool>,
    engine: Arc<Engine>,
    thread: Option<JoinHandle<()>>,
}

impl WorkerHandle {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.engine.notify_worker();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
