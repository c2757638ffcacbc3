use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::types::Timestamp;

/// Source of integer-second timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Moves a simulated clock forward. Wall clocks ignore this and return `false`.
    fn advance(&self, _seconds: u64) -> bool {
        false
    }

    fn is_simulated(&self) -> bool {
        false
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// Manually driven clock. Monotone: it only moves forward.
#[derive(Debug, Default)]
pub struct SimClock {
    now: AtomicU64,
}

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        SimClock {
            now: AtomicU64::new(start),
        }
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        self.now.load(Ordering::SeqCst)
    }

    fn advance(&self, seconds: u64) -> bool {
        let _ = self
            .now
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |t| Some(t.saturating_add(seconds)));
        true
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_advances() {
        let c = SimClock::new(0);
        assert_eq!(c.now(), 0);
        assert!(c.advance(21_600));
        assert_eq!(c.now(), 21_600);
        c.advance(u64::MAX);
        assert_eq!(c.now(), u64::MAX);
    }

    #[test]
    fn wall_clock_does_not_advance() {
        assert!(!SystemClock.advance(10));
        assert!(SystemClock.now() > 1_600_000_000);
    }
}
