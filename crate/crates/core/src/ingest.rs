//! Lossless sequential ingestion.
//!
//! `submit` assigns a sequence number, drops a record whose message is
//! byte-identical to the immediately preceding submitted one, and queues the
//! rest. `drain_step` embeds the queue head and stores it. One producer and
//! one worker may run on different threads; `stats` can be read from anywhere.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::embedder::{EmbedError, Embedder};
use crate::log_model::LogRecord;
use crate::vector_store::{EmbeddedEntry, StoreError, VectorStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("session is closed")]
    SessionClosed,
    #[error("embedding failed: {0}")]
    EmbedderFailure(#[from] EmbedError),
    #[error("store rejected entry: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestStats {
    pub received: u64,
    pub deduplicated: u64,
    pub processed: u64,
    pub queue_depth: u64,
    /// Seconds spent embedding and storing.
    pub processing_time: f64,
}

#[derive(Debug, Default)]
struct QueueState {
    queue: VecDeque<LogRecord>,
    last_message: Option<String>,
    next_seq: u64,
    closed: bool,
    received: u64,
    deduplicated: u64,
    processed: u64,
    processing_time: Duration,
}

impl QueueState {
    fn stats(&self) -> IngestStats {
        IngestStats {
            received: self.received,
            deduplicated: self.deduplicated,
            processed: self.processed,
            queue_depth: self.queue.len() as u64,
            processing_time: self.processing_time.as_secs_f64(),
        }
    }
}

pub struct Ingestor {
    state: Mutex<QueueState>,
    // Held for the whole of a drain step so concurrent workers serialize.
    worker: Mutex<()>,
    embedder: Arc<dyn Embedder>,
    store: Arc<VectorStore>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Ingestor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ingestor")
            .field("stats", &self.stats())
            .finish()
    }
}

impl Ingestor {
    pub fn new(
        embedder: Arc<dyn Embedder>,
        store: Arc<VectorStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        // Continue after whatever the store already holds.
        let last = store.last();
        let state = QueueState {
            next_seq: last.as_ref().map_or(1, |e| e.id + 1),
            last_message: last.map(|e| e.record.message),
            ..Default::default()
        };
        Self {
            state: Mutex::new(state),
            worker: Mutex::new(()),
            embedder,
            store,
            clock,
        }
    }

    pub fn store(&self) -> &Arc<VectorStore> {
        &self.store
    }

    /// Returns `true` if queued, `false` if dropped as a consecutive duplicate.
    pub fn submit(&self, mut record: LogRecord) -> Result<bool, IngestError> {
        let mut st = self.lock_state();
        if st.closed {
            return Err(IngestError::SessionClosed);
        }
        record.seq = st.next_seq;
        st.next_seq += 1;
        st.received += 1;
        if st.last_message.as_deref() == Some(record.message.as_str()) {
            st.deduplicated += 1;
            return Ok(false);
        }
        st.last_message = Some(record.message.clone());
        st.queue.push_back(record);
        Ok(true)
    }

    /// Embed and store at most one record. On failure the record stays at the
    /// head of the queue.
    pub fn drain_step(&self) -> Result<usize, IngestError> {
        let _worker = self.worker.lock().unwrap_or_else(|e| e.into_inner());
        let Some(record) = self.lock_state().queue.front().cloned() else {
            return Ok(0);
        };

        let start = self.clock.now();
        let vector = self.embedder.embed(&record.message)?;
        self.store.insert(EmbeddedEntry::new(record, vector))?;
        let elapsed = self.clock.now().saturating_sub(start);

        let mut st = self.lock_state();
        st.queue.pop_front();
        st.processed += 1;
        st.processing_time += elapsed;
        Ok(1)
    }

    /// Drain until the queue is empty; returns how many records were processed.
    pub fn drain(&self) -> Result<usize, IngestError> {
        let mut total = 0;
        while self.drain_step()? == 1 {
            total += 1;
        }
        Ok(total)
    }

    pub fn stats(&self) -> IngestStats {
        self.lock_state().stats()
    }

    pub fn queue_depth(&self) -> usize {
        self.lock_state().queue.len()
    }

    /// Reject further submits. Queued records can still be drained.
    pub fn close(&self) {
        self.lock_state().closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.lock_state().closed
    }

    fn lock_state(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}
