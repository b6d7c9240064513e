//! Text embedding: a deterministic hashed bag-of-words reference embedder
//! and an adapter for a remote embeddings endpoint.
//!
//! Both produce L2-normalized [`EmbeddingVector`]s; queries and documents go
//! through the same function.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http_client::BlockingClient;

pub const DEFAULT_DIM: usize = 256;
pub const MIN_REFERENCE_DIM: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding endpoint unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid embedding: {0}")]
    InvalidVector(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmbedderConfigError {
    #[error("reference embedder dim must be at least {MIN_REFERENCE_DIM}, got {0}")]
    DimTooSmall(usize),
    #[error("remote embedder requires a non-empty endpoint_url")]
    MissingEndpoint,
    #[error("max_inflight must be at least 1")]
    ZeroInflight,
}

/// A finite, L2-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Wrap raw values as-is after checking they are finite and non-empty.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("zero-length vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector("non-finite component".into()));
        }
        Ok(Self { values })
    }

    /// Scale to unit length. Fails on the zero vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbedError> {
        let v = Self::new(values)?;
        let norm = v.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::InvalidVector("vector has zero norm".into()));
        }
        Ok(Self {
            values: v.values.into_iter().map(|x| x / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Queries share the document embedding space.
    fn embed_query(&self, question: &str) -> Result<EmbeddingVector, EmbedError> {
        self.embed(question)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Reference,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub endpoint_url: String,
    /// Seconds.
    pub timeout: f64,
    pub max_inflight: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Reference,
            dim: DEFAULT_DIM,
            endpoint_url: String::new(),
            timeout: 30.0,
            max_inflight: 1,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedderConfigError> {
        match self.kind {
            EmbedderKind::Reference if self.dim < MIN_REFERENCE_DIM => {
                Err(EmbedderConfigError::DimTooSmall(self.dim))
            }
            EmbedderKind::Remote if self.endpoint_url.trim().is_empty() => {
                Err(EmbedderConfigError::MissingEndpoint)
            }
            EmbedderKind::Remote if self.max_inflight == 0 => {
                Err(EmbedderConfigError::ZeroInflight)
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedderConfigError> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::Reference => Box::new(ReferenceEmbedder::new(self.dim)?),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(
                &self.endpoint_url,
                Duration::from_secs_f64(self.timeout.max(0.0)),
                self.max_inflight,
            )?),
        })
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Lowercase, then split on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Hashed bag-of-words embedder.
///
/// The n-th occurrence (0-based) of a token within one text adds
/// `1 / (1 + n)` to bucket `fnv1a64(token) % dim`, negated when bit 63 of the
/// hash is set. Token weights are accumulated per distinct token and added in
/// sorted token order, so any permutation of the same tokens yields a
/// bitwise-identical vector.
#[derive(Debug, Clone)]
pub struct ReferenceEmbedder {
    dim: usize,
}

impl ReferenceEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedderConfigError> {
        if dim < MIN_REFERENCE_DIM {
            return Err(EmbedderConfigError::DimTooSmall(dim));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn raw(&self, text: &str) -> Vec<f64> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let tokens = tokenize(text);
        if tokens.is_empty() {
            // Punctuation-only text: treat the trimmed text as one token.
            counts.insert(text.trim().to_string(), 1);
        } else {
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
        }

        let mut values = vec![0.0_f64; self.dim];
        for (token, count) in &counts {
            let weight: f64 = (0..*count).map(|n| 1.0 / (1.0 + n as f64)).sum();
            let h = fnv1a64(token);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign * weight;
        }

        if values.iter().all(|v| *v == 0.0) {
            // Every bucket cancelled out; fall back to a one-hot of the whole text.
            let h = fnv1a64(text.trim());
            values[(h % self.dim as u64) as usize] = 1.0;
        }
        values
    }
}

impl Embedder for ReferenceEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        EmbeddingVector::normalized(self.raw(text))
    }
}

/// Counting semaphore bounding concurrent remote calls.
#[derive(Debug)]
struct Inflight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl Inflight {
    fn acquire(&self) -> InflightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InflightGuard { owner: self }
    }
}

struct InflightGuard<'a> {
    owner: &'a Inflight,
}

impl Drop for InflightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.owner.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.owner.freed.notify_one();
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

/// POSTs `{"input": text}` to the endpoint and expects `{"embedding": [...]}`.
#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint_url: String,
    client: BlockingClient,
    inflight: Inflight,
    session_dim: Mutex<Option<usize>>,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint_url: &str,
        timeout: Duration,
        max_inflight: usize,
    ) -> Result<Self, EmbedderConfigError> {
        if endpoint_url.trim().is_empty() {
            return Err(EmbedderConfigError::MissingEndpoint);
        }
        if max_inflight == 0 {
            return Err(EmbedderConfigError::ZeroInflight);
        }
        let client =
            BlockingClient::new(timeout).expect("http client builds with default settings");
        Ok(Self {
            endpoint_url: endpoint_url.to_string(),
            client,
            inflight: Inflight {
                limit: max_inflight,
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
            session_dim: Mutex::new(None),
        })
    }

    fn fetch(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let _slot = self.inflight.acquire();
        let resp = self
            .client
            .post(&self.endpoint_url)
            .json(&EmbedRequest { input: text })
            .send()
            .map_err(|e| EmbedError::RemoteUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::RemoteUnavailable(format!(
                "endpoint returned {}",
                resp.status()
            )));
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| EmbedError::InvalidVector(format!("bad response body: {e}")))?;
        Ok(body.embedding)
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let vector = EmbeddingVector::normalized(self.fetch(text)?)?;
        let mut dim = self.session_dim.lock().unwrap_or_else(|e| e.into_inner());
        match *dim {
            Some(expected) if expected != vector.dim() => Err(EmbedError::DimensionMismatch {
                expected,
                got: vector.dim(),
            }),
            Some(_) => Ok(vector),
            None => {
                *dim = Some(vector.dim());
                Ok(vector)
            }
        }
    }
}
