//! Time sources used for the timing metrics.
//!
//! Every duration the engine reports (log processing time, question time,
//! backend latency, replay execution time) is measured against a [`Clock`].
//! [`WallClock`] is the production source. [`LogicalClock`] advances by a
//! fixed tick on every reading, which makes single-threaded runs produce
//! byte-identical reports.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync + std::fmt::Debug {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;

    /// Pause the caller until `deadline` (same origin as `now`).
    fn sleep_until(&self, deadline: Duration);
}

#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
}

/// Deterministic clock: each call to `now` advances time by `tick`.
#[derive(Debug)]
pub struct LogicalClock {
    tick_nanos: u64,
    elapsed_nanos: AtomicU64,
}

impl LogicalClock {
    pub fn new(tick: Duration) -> Self {
        Self {
            tick_nanos: tick.as_nanos() as u64,
            elapsed_nanos: AtomicU64::new(0),
        }
    }
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self::new(Duration::from_millis(1))
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> Duration {
        let t = self
            .elapsed_nanos
            .fetch_add(self.tick_nanos, Ordering::SeqCst)
            + self.tick_nanos;
        Duration::from_nanos(t)
    }

    // Jumps forward instead of blocking.
    fn sleep_until(&self, deadline: Duration) {
        self.elapsed_nanos
            .fetch_max(deadline.as_nanos() as u64, Ordering::SeqCst);
    }
}
