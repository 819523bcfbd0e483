//! FLOP and wall-time accounting.
//!
//! Every product kernel reports its multiply-add count through [`add`]. The
//! count lands in a process-wide atomic and in a per-thread tally split by the
//! currently entered [`Phase`]. Training runs are single-threaded, so the
//! per-thread tally gives exact per-run numbers even when several runs share a
//! process.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::Serialize;

static GLOBAL_FLOPS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forward,
    Backward,
    Overhead,
    Other,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Forward, Phase::Backward, Phase::Overhead, Phase::Other];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Forward => "feedforward",
            Phase::Backward => "backprop",
            Phase::Overhead => "policy_overhead",
            Phase::Other => "other",
        }
    }
}

/// Per-thread FLOP and time totals, indexed by phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTally {
    flops: [u64; 4],
    time: [Duration; 4],
}

impl PhaseTally {
    pub fn flops(&self, phase: Phase) -> u64 {
        self.flops[phase.slot()]
    }

    pub fn time(&self, phase: Phase) -> Duration {
        self.time[phase.slot()]
    }

    pub fn total_flops(&self) -> u64 {
        self.flops.iter().sum()
    }

    /// Difference `self - earlier`, for measuring a region between two snapshots.
    pub fn since(&self, earlier: &PhaseTally) -> PhaseTally {
        let mut out = PhaseTally::default();
        for i in 0..4 {
            out.flops[i] = self.flops[i] - earlier.flops[i];
            out.time[i] = self.time[i].saturating_sub(earlier.time[i]);
        }
        out
    }

    pub fn accumulate(&mut self, other: &PhaseTally) {
        for i in 0..4 {
            self.flops[i] += other.flops[i];
            self.time[i] += other.time[i];
        }
    }
}

#[derive(Default)]
struct Ledger {
    tally: PhaseTally,
    // (phase, instant the phase last became the innermost one)
    stack: Vec<(Phase, Instant)>,
}

thread_local! {
    static LEDGER: RefCell<Ledger> = RefCell::new(Ledger::default());
}

/// Record `n` floating-point operations against the current phase.
pub fn add(n: u64) {
    GLOBAL_FLOPS.fetch_add(n, Ordering::Relaxed);
    LEDGER.with(|l| {
        let mut l = l.borrow_mut();
        let phase = l.stack.last().map(|(p, _)| *p).unwrap_or(Phase::Other);
        l.tally.flops[phase.slot()] += n;
    });
}

/// Process-wide FLOP count; monotone non-decreasing.
pub fn global_total() -> u64 {
    GLOBAL_FLOPS.load(Ordering::Relaxed)
}

/// Snapshot of the calling thread's tally. Time of phases that are still open
/// is included up to now.
pub fn snapshot() -> PhaseTally {
    LEDGER.with(|l| {
        let l = l.borrow();
        let mut t = l.tally;
        if let Some((p, since)) = l.stack.last() {
            t.time[p.slot()] += since.elapsed();
        }
        t
    })
}

/// Run `f` and return its result with the FLOPs it counted on this thread.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, PhaseTally) {
    let before = snapshot();
    let out = f();
    (out, snapshot().since(&before))
}

/// Guard returned by [`enter`]; leaving the scope closes the phase.
pub struct PhaseGuard {
    _not_send: std::marker::PhantomData<*const ()>,
}

/// Make `phase` the innermost active phase until the guard drops. Time spent in
/// a nested phase is not credited to the enclosing one.
pub fn enter(phase: Phase) -> PhaseGuard {
    let now = Instant::now();
    LEDGER.with(|l| {
        let mut l = l.borrow_mut();
        if let Some((p, since)) = l.stack.last().copied() {
            l.tally.time[p.slot()] += now - since;
        }
        l.stack.push((phase, now));
    });
    PhaseGuard {
        _not_send: std::marker::PhantomData,
    }
}

impl Drop for PhaseGuard {
    fn drop(&mut self) {
        let now = Instant::now();
        LEDGER.with(|l| {
            let mut l = l.borrow_mut();
            if let Some((p, since)) = l.stack.pop() {
                l.tally.time[p.slot()] += now - since;
            }
            if let Some(top) = l.stack.last_mut() {
                top.1 = now;
            }
        });
    }
}
