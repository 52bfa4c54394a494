//! Deterministic work accounting.
//!
//! Method selection compares objective gains per unit of effort. Wall-clock
//! time would make runs irreproducible, so effort is counted instead: simplex
//! pivots plus network evaluations performed on the current thread.

use std::cell::Cell;

thread_local! {
    static PIVOTS: Cell<u64> = const { Cell::new(0) };
    static EVALS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add_pivots(n: u64) {
    PIVOTS.with(|c| c.set(c.get() + n));
}

pub(crate) fn add_evals(n: u64) {
    EVALS.with(|c| c.set(c.get() + n));
}

/// Snapshot of the counters on the calling thread.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCount {
    pub pivots: u64,
    pub evals: u64,
}

impl WorkCount {
    pub fn now() -> Self {
        WorkCount {
            pivots: PIVOTS.with(Cell::get),
            evals: EVALS.with(Cell::get),
        }
    }

    /// Units elapsed since `earlier`; never zero so it can be divided by.
    pub fn units_since(&self, earlier: &WorkCount) -> f64 {
        let p = self.pivots.saturating_sub(earlier.pivots);
        let e = self.evals.saturating_sub(earlier.evals);
        (p + e).max(1) as f64
    }
}
