//! In-memory store of embedded log entries with exhaustive cosine search and
//! Maximal Marginal Relevance retrieval.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::EmbeddingVector;
use crate::log_model::LogRecord;

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("entry id {0} already present")]
    DuplicateId(u64),
    #[error("dimension mismatch: store has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("store is empty")]
    EmptyStore,
    #[error("invalid retrieval params: {0}")]
    InvalidParams(String),
    #[error("store file: {0}")]
    Format(String),
}

/// A log record paired with its embedding. `id` equals the record's `seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedEntry {
    pub id: u64,
    pub record: LogRecord,
    pub vector: EmbeddingVector,
}

impl EmbeddedEntry {
    pub fn new(record: LogRecord, vector: EmbeddingVector) -> Self {
        Self {
            id: record.seq,
            record,
            vector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalParams {
    pub k: usize,
    /// Relevance weight; `1 - lambda` weighs redundancy.
    pub lambda: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self { k: 20, lambda: 0.5 }
    }
}

impl RetrievalParams {
    pub fn new(k: usize, lambda: f64) -> Result<Self, StoreError> {
        let p = Self { k, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.k < 1 {
            return Err(StoreError::InvalidParams("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(StoreError::InvalidParams(format!(
                "lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `dot(a, b) / (|a| |b|)`; 0 when either vector has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(cosine_unchecked(a.values(), b.values()))
}

fn cosine_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Default)]
struct Inner {
    dim: Option<usize>,
    entries: Vec<EmbeddedEntry>,
    ids: HashSet<u64>,
}

/// Single-writer, multi-reader store. Readers always see whole entries.
#[derive(Debug, Default)]
pub struct VectorStore {
    inner: RwLock<Inner>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    store_version: u32,
    dim: usize,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store whose dimension is fixed up front.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            inner: RwLock::new(Inner {
                dim: Some(dim),
                ..Default::default()
            }),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.read().dim
    }

    pub fn size(&self) -> usize {
        self.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    /// Snapshot of all entries in insertion order.
    pub fn entries(&self) -> Vec<EmbeddedEntry> {
        self.read().entries.clone()
    }

    pub fn last(&self) -> Option<EmbeddedEntry> {
        self.read().entries.last().cloned()
    }

    pub fn clear(&self) {
        let mut inner = self.write();
        inner.entries.clear();
        inner.ids.clear();
    }

    pub fn insert(&self, entry: EmbeddedEntry) -> Result<(), StoreError> {
        let mut inner = self.write();
        if let Some(expected) = inner.dim {
            if expected != entry.vector.dim() {
                return Err(StoreError::DimensionMismatch {
                    expected,
                    got: entry.vector.dim(),
                });
            }
        }
        if inner.ids.contains(&entry.id) {
            return Err(StoreError::DuplicateId(entry.id));
        }
        inner.dim = Some(entry.vector.dim());
        inner.ids.insert(entry.id);
        inner.entries.push(entry);
        Ok(())
    }

    /// Greedy MMR selection.
    ///
    /// Each round picks the unselected entry maximizing
    /// `lambda * cos(query, d) - (1 - lambda) * max_{s in selected} cos(d, s)`,
    /// with the max over an empty selection taken as 0 and ties going to the
    /// smaller id. Returns `min(k, size)` entries in selection order.
    pub fn retrieve(
        &self,
        query: &EmbeddingVector,
        params: &RetrievalParams,
    ) -> Result<Vec<EmbeddedEntry>, StoreError> {
        params.validate()?;
        let inner = self.read();
        let dim = match inner.dim {
            _ if inner.entries.is_empty() => return Err(StoreError::EmptyStore),
            Some(d) => d,
            None => return Err(StoreError::EmptyStore),
        };
        if query.dim() != dim {
            return Err(StoreError::DimensionMismatch {
                expected: dim,
                got: query.dim(),
            });
        }

        let entries = &inner.entries;
        let n = entries.len();
        let relevance: Vec<f64> = entries
            .iter()
            .map(|e| cosine_unchecked(query.values(), e.vector.values()))
            .collect();
        // Running max similarity to the selected set, maintained incrementally.
        let mut redundancy = vec![0.0_f64; n];
        let mut selected = vec![false; n];
        let mut picks = Vec::with_capacity(params.k.min(n));

        for round in 0..params.k.min(n) {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                if selected[i] {
                    continue;
                }
                let score = params.lambda * relevance[i] - (1.0 - params.lambda) * redundancy[i];
                let better = match best {
                    None => true,
                    Some((j, s)) => score > s || (score == s && entries[i].id < entries[j].id),
                };
                if better {
                    best = Some((i, score));
                }
            }
            let (chosen, _) = best.expect("fewer rounds than candidates");
            selected[chosen] = true;
            picks.push(chosen);

            if round + 1 < params.k.min(n) {
                let chosen_vec = entries[chosen].vector.values();
                for i in 0..n {
                    if !selected[i] {
                        let sim = cosine_unchecked(entries[i].vector.values(), chosen_vec);
                        if round == 0 || sim > redundancy[i] {
                            redundancy[i] = sim;
                        }
                    }
                }
            }
        }

        Ok(picks.into_iter().map(|i| entries[i].clone()).collect())
    }

    /// Write the versioned JSONL dump: a header line then one entry per line.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let inner = self.read();
        let header = StoreHeader {
            store_version: STORE_VERSION,
            dim: inner.dim.unwrap_or(0),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for e in &inner.entries {
            writeln!(w, "{}", serde_json::to_string(e)?)?;
        }
        w.flush()
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let mut lines = reader.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| StoreError::Format("missing header".into()))?
            .map_err(|e| StoreError::Format(e.to_string()))?;
        let header: StoreHeader = serde_json::from_str(&header_line)
            .map_err(|e| StoreError::Format(format!("bad header: {e}")))?;
        if header.store_version != STORE_VERSION {
            return Err(StoreError::Format(format!(
                "unsupported store_version {}",
                header.store_version
            )));
        }
        let store = if header.dim == 0 {
            Self::new()
        } else {
            Self::with_dim(header.dim)
        };
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| StoreError::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: EmbeddedEntry = serde_json::from_str(&line)
                .map_err(|e| StoreError::Format(format!("line {}: {e}", idx + 2)))?;
            store.insert(entry)?;
        }
        Ok(store)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec()).unwrap()
    }

    fn entry(id: u64, values: &[f64]) -> EmbeddedEntry {
        EmbeddedEntry::new(
            LogRecord::new(id * 10, format!("m{id}")).with_seq(id),
            unit(values),
        )
    }

    #[test]
    fn insert_and_size() {
        let s = VectorStore::new();
        assert_eq!(s.size(), 0);
        s.insert(entry(1, &[1.0, 0.0])).unwrap();
        assert_eq!(s.size(), 1);
        assert_eq!(
            s.insert(entry(1, &[0.0, 1.0])),
            Err(StoreError::DuplicateId(1))
        );
        assert_eq!(s.size(), 1);
    }

    #[test]
    fn dimension_fixed_by_first_insert() {
        let s = VectorStore::with_dim(128);
        let e = EmbeddedEntry::new(LogRecord::new(0, "a").with_seq(1), unit(&[1.0; 256]));
        assert_eq!(
            s.insert(e),
            Err(StoreError::DimensionMismatch {
                expected: 128,
                got: 256
            })
        );
        let s = VectorStore::new();
        s.insert(entry(1, &[1.0, 0.0])).unwrap();
        assert!(matches!(
            s.insert(entry(2, &[1.0, 0.0, 0.0])),
            Err(StoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_basics() {
        let v = unit(&[0.3, -0.4, 0.5]);
        let neg = unit(&[-0.3, 0.4, -0.5]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-9);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-9);
        assert_eq!(cosine(&unit(&[1.0, 0.0]), &unit(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(cosine(&unit(&[1.0, 0.0]), &unit(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn retrieve_errors() {
        let s = VectorStore::new();
        let q = unit(&[1.0, 0.0]);
        assert_eq!(
            s.retrieve(&q, &RetrievalParams::default()),
            Err(StoreError::EmptyStore)
        );
        s.insert(entry(1, &[1.0, 0.0])).unwrap();
        assert!(matches!(
            s.retrieve(&unit(&[1.0, 0.0, 0.0]), &RetrievalParams::default()),
            Err(StoreError::DimensionMismatch { .. })
        ));
        assert!(RetrievalParams::new(0, 0.5).is_err());
        assert!(RetrievalParams::new(1, 1.5).is_err());
        assert!(RetrievalParams::new(1, -0.1).is_err());
    }

    #[test]
    fn lambda_one_is_top_k_with_id_tiebreak() {
        let s = VectorStore::new();
        s.insert(entry(3, &[1.0, 0.0])).unwrap();
        s.insert(entry(1, &[1.0, 0.0])).unwrap();
        s.insert(entry(2, &[0.6, 0.8])).unwrap();
        s.insert(entry(4, &[0.0, 1.0])).unwrap();
        let got: Vec<u64> = s
            .retrieve(&unit(&[1.0, 0.0]), &RetrievalParams::new(3, 1.0).unwrap())
            .unwrap()
            .iter()
            .map(|e| e.id)
            .collect();
        assert_eq!(got, [1, 3, 2]);
    }

    #[test]
    fn diversity_skips_duplicates() {
        let s = VectorStore::new();
        s.insert(entry(1, &[1.0, 0.0])).unwrap();
        s.insert(entry(2, &[1.0, 0.0])).unwrap();
        s.insert(entry(3, &[0.7, 0.7])).unwrap();
        let got: Vec<u64> = s
            .retrieve(&unit(&[1.0, 0.0]), &RetrievalParams::new(2, 0.3).unwrap())
            .unwrap()
            .iter()
            .map(|e| e.id)
            .collect();
        assert_eq!(got, [1, 3]);
    }

    #[test]
    fn k_larger_than_store() {
        let s = VectorStore::new();
        s.insert(entry(1, &[1.0, 0.0])).unwrap();
        s.insert(entry(2, &[0.0, 1.0])).unwrap();
        let got = s
            .retrieve(&unit(&[1.0, 1.0]), &RetrievalParams::new(10, 0.3).unwrap())
            .unwrap();
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn dump_and_load() {
        let s = VectorStore::new();
        s.insert(entry(1, &[0.1, 0.2, 0.3])).unwrap();
        s.insert(entry(2, &[0.3, 0.2, 0.1])).unwrap();
        let mut buf = Vec::new();
        s.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"store_version\":1,\"dim\":3}\n"));
        let back = VectorStore::load(buf.as_slice()).unwrap();
        assert_eq!(back.entries(), s.entries());
        assert_eq!(back.dim(), Some(3));

        let mut empty = Vec::new();
        VectorStore::new().dump(&mut empty).unwrap();
        assert_eq!(VectorStore::load(empty.as_slice()).unwrap().size(), 0);
        assert!(VectorStore::load("{\"store_version\":2,\"dim\":3}\n".as_bytes()).is_err());
    }
}
