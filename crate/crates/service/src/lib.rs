//! HTTP/JSON façade over a single engine session.
//!
//! Every engine call is blocking (embedding and completion backends may do
//! synchronous network I/O), so handlers hop onto the blocking pool.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use explainer_core::context_prompt::{format_timestamp, ContextSet};
use explainer_core::engine::{AskError, Engine, ExplanationResult};
use explainer_core::ingest::IngestError;
use explainer_core::log_model::parse_log_value;
use explainer_core::vector_store::RetrievalParams;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

/// Request bodies above this are rejected before parsing.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadRequest,
    EmptyStore,
    BackendUnavailable,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::EmptyStore => StatusCode::CONFLICT,
            ErrorCode::BackendUnavailable => StatusCode::BAD_GATEWAY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    /// Retrieved context, attached when the backend failed after retrieval.
    pub context: Option<Vec<ContextLine>>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            context: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": { "code": self.code, "message": self.message } });
        if let Some(ctx) = self.context {
            body["context"] = json!(ctx);
        }
        (self.code.status(), Json(body)).into_response()
    }
}

impl From<AskError> for ApiError {
    fn from(e: AskError) -> Self {
        match e {
            AskError::EmptyStore => {
                ApiError::new(ErrorCode::EmptyStore, "no logs have been ingested")
            }
            AskError::EmptyQuestion | AskError::InvalidParams(_) => {
                ApiError::bad_request(e.to_string())
            }
            AskError::Backend { error, partial } => ApiError {
                code: ErrorCode::BackendUnavailable,
                message: error.to_string(),
                context: Some(context_lines(&partial.context)),
            },
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        ApiError::internal(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextLine {
    pub ts: u64,
    pub ts_iso: String,
    pub msg: String,
}

fn context_lines(ctx: &ContextSet) -> Vec<ContextLine> {
    ctx.entries
        .iter()
        .map(|e| ContextLine {
            ts: e.record.timestamp,
            ts_iso: format_timestamp(e.record.timestamp),
            msg: e.record.message.clone(),
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogsRequest {
    records: Vec<Value>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LogsResponse {
    pub received: u64,
    pub accepted: u64,
    pub deduplicated: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    question: String,
    k: Option<i64>,
    lambda: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct QueryResponse {
    pub answer: String,
    pub context: Vec<ContextLine>,
    pub question_time_s: f64,
    pub backend_latency_s: f64,
}

impl From<&ExplanationResult> for QueryResponse {
    fn from(r: &ExplanationResult) -> Self {
        Self {
            answer: r.answer.clone(),
            context: context_lines(&r.context),
            question_time_s: r.question_time,
            backend_latency_s: r.backend_latency,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorsConfig {
    /// Exact origins allowed to call the API; `"*"` allows any.
    pub allowed_origins: Vec<String>,
}

impl CorsConfig {
    fn layer(&self) -> Result<CorsLayer, ApiError> {
        let base = CorsLayer::new()
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([axum::http::header::CONTENT_TYPE]);
        if self.allowed_origins.iter().any(|o| o == "*") {
            return Ok(base.allow_origin(AllowOrigin::any()));
        }
        let origins = self
            .allowed_origins
            .iter()
            .map(|o| {
                HeaderValue::from_str(o)
                    .map_err(|_| ApiError::bad_request(format!("invalid CORS origin {o:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(base.allow_origin(origins))
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn post_logs(
    State(engine): State<Arc<Engine>>,
    body: Bytes,
) -> Result<Json<LogsResponse>, ApiError> {
    let req: LogsRequest = parse_body(&body)?;
    // Parse the whole batch first so a bad record leaves the session untouched.
    let records = req
        .records
        .iter()
        .enumerate()
        .map(|(i, v)| {
            parse_log_value(v).map_err(|e| ApiError::bad_request(format!("record {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = blocking(move || Ok(engine.ingest_batch(records)?)).await?;
    Ok(Json(LogsResponse {
        received: out.received,
        accepted: out.accepted,
        deduplicated: out.deduplicated,
    }))
}

async fn post_query(
    State(engine): State<Arc<Engine>>,
    body: Bytes,
) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest = parse_body(&body)?;
    let defaults = engine.config().retrieval;
    let k = match req.k {
        None => defaults.k,
        Some(k) if k >= 1 => k as usize,
        Some(k) => {
            return Err(ApiError::bad_request(format!(
                "k must be at least 1, got {k}"
            )))
        }
    };
    let params = RetrievalParams::new(k, req.lambda.unwrap_or(defaults.lambda))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let res = blocking(move || Ok(engine.ask(&req.question, &params)?)).await?;
    Ok(Json(QueryResponse::from(&res)))
}

async fn get_report(State(engine): State<Arc<Engine>>) -> Result<Response, ApiError> {
    blocking(move || Ok(Json(engine.report()).into_response())).await
}

async fn post_reset(State(engine): State<Arc<Engine>>) -> Result<Json<Value>, ApiError> {
    blocking(move || {
        engine.reset();
        Ok(Json(json!({ "ok": true })))
    })
    .await
}

async fn get_health(State(engine): State<Arc<Engine>>) -> Result<Json<Value>, ApiError> {
    let backend_ok = blocking(move || Ok(engine.backend().health_check())).await?;
    Ok(Json(json!({ "ok": true, "backend_ok": backend_ok })))
}

/// Build the API router over `engine`.
pub fn router(engine: Arc<Engine>, cors: &CorsConfig) -> Result<Router, ApiError> {
    Ok(Router::new()
        .route("/v1/logs", post(post_logs))
        .route("/v1/query", post(post_query))
        .route("/v1/report", get(get_report))
        .route("/v1/reset", post(post_reset))
        .route("/v1/health", get(get_health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors.layer()?)
        .with_state(engine))
}

/// Serve until `shutdown` resolves. A background worker keeps the ingest
/// queue drained between queries.
pub async fn serve(
    listener: TcpListener,
    engine: Arc<Engine>,
    cors: &CorsConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(engine.clone(), cors)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let worker = engine.spawn_worker();
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, session = %engine.session_id(), "serving");
    }
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await;
    tokio::task::spawn_blocking(move || worker.stop())
        .await
        .ok();
    result
}
