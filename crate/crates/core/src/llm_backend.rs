//! Answer generation backends.
//!
//! [`MockBackend`] returns a digest of the prompt so end-to-end runs can be
//! asserted exactly. [`HttpBackend`] talks to an OpenAI-compatible
//! `/v1/completions` server (llama.cpp server, vLLM, LocalAI, ...).

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context_prompt::PromptBundle;
use crate::http_client::BlockingClient;

/// Characters per token used by the overflow guard.
pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("prompt of {chars} characters exceeds the context cap of {cap} characters")]
    ContextOverflow { chars: usize, cap: usize },
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendConfigError {
    #[error("n_ctx must be positive")]
    ZeroContext,
    #[error("http backend requires a non-empty endpoint_url")]
    MissingEndpoint,
    #[error("invalid sampling params: {0}")]
    Sampling(String),
    #[error("http client: {0}")]
    Client(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub n_prev: u32,
    pub top_k: u32,
    pub top_p: f64,
    pub temp: f64,
    pub penalty_last_n: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            n_prev: 64,
            top_k: 40,
            top_p: 0.95,
            temp: 0.0,
            penalty_last_n: 64,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), BackendConfigError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendConfigError::Sampling(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.temp.is_nan() || self.temp < 0.0 {
            return Err(BackendConfigError::Sampling(format!(
                "temp must be >= 0, got {}",
                self.temp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// Server runtime knobs are forwarded as-is; they are not enforced locally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: String,
    pub n_ctx: u32,
    pub n_batch: u32,
    pub n_threads: u32,
    pub n_gpu_layers: u32,
    pub max_tokens: u32,
    /// Seconds.
    pub timeout: f64,
    /// Extra attempts after a connection failure or timeout.
    pub retries: u32,
    pub sampling: SamplingParams,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: String::new(),
            n_ctx: 4096,
            n_batch: 256,
            n_threads: 4,
            n_gpu_layers: 33,
            max_tokens: 512,
            timeout: 120.0,
            retries: 2,
            sampling: SamplingParams::default(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendConfigError> {
        if self.n_ctx == 0 {
            return Err(BackendConfigError::ZeroContext);
        }
        if self.kind == BackendKind::Http && self.endpoint_url.trim().is_empty() {
            return Err(BackendConfigError::MissingEndpoint);
        }
        self.sampling.validate()
    }

    /// Largest prompt, in characters, sent to the model.
    pub fn char_cap(&self) -> usize {
        self.n_ctx as usize * CHARS_PER_TOKEN
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout.max(0.0))
    }

    pub fn build(&self) -> Result<Box<dyn LlmBackend>, BackendConfigError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockBackend::new(self.clone())),
            BackendKind::Http => Box::new(HttpBackend::new(self.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// Seconds.
    pub latency: f64,
    pub token_estimate: usize,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &PromptBundle) -> Result<CompletionResult, BackendError>;

    fn health_check(&self) -> bool;

    fn config(&self) -> &BackendConfig;
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

/// Rejects prompts longer than `4 * n_ctx` characters.
pub fn check_overflow(prompt: &PromptBundle, config: &BackendConfig) -> Result<(), BackendError> {
    let chars = prompt.prompt_text.chars().count();
    let cap = config.char_cap();
    if chars > cap {
        return Err(BackendError::ContextOverflow { chars, cap });
    }
    Ok(())
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// ```text
/// MOCK-ANSWER q=<question>
/// ctx=<n> lines
/// <sha256 of prompt_text>
/// ```
#[derive(Debug, Clone)]
pub struct MockBackend {
    config: BackendConfig,
}

impl MockBackend {
    pub fn new(config: BackendConfig) -> Self {
        Self {
            config: BackendConfig {
                kind: BackendKind::Mock,
                ..config
            },
        }
    }

    pub fn answer_for(prompt: &PromptBundle) -> String {
        format!(
            "MOCK-ANSWER q={}\nctx={} lines\n{}",
            prompt.question,
            prompt.context.len(),
            sha256_hex(&prompt.prompt_text)
        )
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(BackendConfig::default())
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<CompletionResult, BackendError> {
        let start = Instant::now();
        check_overflow(prompt, &self.config)?;
        let text = Self::answer_for(prompt);
        Ok(CompletionResult {
            token_estimate: estimate_tokens(&text),
            text,
            latency: start.elapsed().as_secs_f64(),
        })
    }

    fn health_check(&self) -> bool {
        true
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    text: String,
}

/// OpenAI-compatible completions client. Calls are mutually exclusive.
#[derive(Debug)]
pub struct HttpBackend {
    config: BackendConfig,
    client: BlockingClient,
    in_flight: Mutex<()>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendConfigError> {
        let config = BackendConfig {
            kind: BackendKind::Http,
            ..config
        };
        config.validate()?;
        let client = BlockingClient::new(config.timeout())
            .map_err(|e| BackendConfigError::Client(e.to_string()))?;
        Ok(Self {
            config,
            client,
            in_flight: Mutex::new(()),
        })
    }

    fn base(&self) -> &str {
        self.config.endpoint_url.trim_end_matches('/')
    }

    pub fn completions_url(&self) -> String {
        let base = self.base();
        if base.ends_with("/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/completions")
        } else {
            format!("{base}/v1/completions")
        }
    }

    fn models_url(&self) -> String {
        let base = self.base();
        let root = base.strip_suffix("/completions").unwrap_or(base);
        let root = root.strip_suffix("/v1").unwrap_or(root);
        format!("{root}/v1/models")
    }

    /// JSON request body: the completion fields plus the server runtime knobs.
    pub fn request_body(&self, prompt: &PromptBundle) -> serde_json::Value {
        let c = &self.config;
        json!({
            "prompt": prompt.prompt_text,
            "max_tokens": c.max_tokens,
            "temperature": c.sampling.temp,
            "top_p": c.sampling.top_p,
            "top_k": c.sampling.top_k,
            "n_prev": c.sampling.n_prev,
            "repeat_last_n": c.sampling.penalty_last_n,
            "penalty_last_n": c.sampling.penalty_last_n,
            "n_ctx": c.n_ctx,
            "n_batch": c.n_batch,
            "n_threads": c.n_threads,
            "n_gpu_layers": c.n_gpu_layers,
            "stream": false,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(self.completions_url())
            .json(body)
            .send()
            .map_err(|e| self.classify(e))?;
        let status = resp.status();
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            return Err(BackendError::BackendUnavailable(format!(
                "server returned {status}: {}",
                detail.chars().take(200).collect::<String>()
            )));
        }
        let parsed: CompletionResponse = resp.json().map_err(|e| self.classify(e))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.text.trim().to_string())
            .ok_or_else(|| BackendError::BackendUnavailable("response had no choices".into()))
    }

    fn classify(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.config.timeout())
        } else {
            BackendError::BackendUnavailable(e.to_string())
        }
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<CompletionResult, BackendError> {
        check_overflow(prompt, &self.config)?;
        let _guard = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        let body = self.request_body(prompt);
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(CompletionResult {
                        token_estimate: estimate_tokens(&text),
                        text,
                        latency: start.elapsed().as_secs_f64(),
                    })
                }
                Err(e) if attempt < self.config.retries => {
                    tracing::warn!(attempt, error = %e, "completion failed, retrying");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn health_check(&self) -> bool {
        match self.client.get(self.models_url()).send() {
            Ok(resp) => resp.status().is_success(),
            Err(_) => false,
        }
    }

    fn config(&self) -> &BackendConfig {
        &self.config
    }
}
