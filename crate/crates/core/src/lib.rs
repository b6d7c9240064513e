//! Retrieval-augmented explanations over autonomous-robot logs.
//!
//! Logs are ingested as [`log_model::LogRecord`]s, consecutive duplicates are
//! dropped, the rest are embedded and stored. A question is embedded in the
//! same space, the most relevant and mutually diverse log lines are picked
//! with Maximal Marginal Relevance, sorted chronologically, substituted into
//! a prompt template and sent to a language-model backend.

pub mod clock;
pub mod config;
pub mod context_prompt;
pub mod embedder;
pub mod engine;
pub mod eval;
mod http_client;
pub mod ingest;
pub mod llm_backend;
pub mod log_model;
pub mod scenario_sim;
pub mod vector_store;

pub use clock::{Clock, LogicalClock, WallClock};
pub use config::EngineConfig;
pub use context_prompt::{ContextSet, PromptBundle};
pub use embedder::{Embedder, EmbeddingVector, ReferenceEmbedder};
pub use engine::{AskError, Engine, ExplanationResult, SessionReport};
pub use ingest::{IngestStats, Ingestor};
pub use llm_backend::{BackendConfig, LlmBackend, MockBackend};
pub use log_model::{Level, LogCorpus, LogRecord};
pub use scenario_sim::{ReplayRate, Run, ScenarioSpec};
pub use vector_store::{EmbeddedEntry, RetrievalParams, VectorStore};
