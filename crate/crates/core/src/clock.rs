//! Injectable time source so timing-dependent paths stay testable.
//!
//! Wall-clock timing is what the benchmark reports; the step clock replaces it
//! in tests where reports must be byte-for-byte reproducible.

use std::time::Instant;

/// Source of stopwatch timers. Every timed phase starts its own timer, so
/// concurrent runs never share mutable timing state.
pub trait Clock: Send + Sync {
    fn timer(&self) -> Box<dyn Timer>;
}

pub trait Timer: Send {
    /// Seconds since the timer was started. Always strictly positive.
    fn elapsed_secs(&mut self) -> f64;
}

/// Real wall-clock time.
#[derive(Debug, Default, Clone, Copy)]
pub struct WallClock;

impl Clock for WallClock {
    fn timer(&self) -> Box<dyn Timer> {
        Box::new(WallTimer(Instant::now()))
    }
}

struct WallTimer(Instant);

impl Timer for WallTimer {
    fn elapsed_secs(&mut self) -> f64 {
        // Guard against coarse platform clocks reporting zero for tiny spans.
        self.0.elapsed().as_secs_f64().max(1e-9)
    }
}

/// Deterministic clock: every poll of a timer advances it by a fixed step.
/// Timers are independent, so results do not depend on thread interleaving.
#[derive(Debug, Clone, Copy)]
pub struct StepClock {
    step_secs: f64,
}

impl StepClock {
    pub fn new(step_secs: f64) -> Self {
        assert!(
            step_secs > 0.0 && step_secs.is_finite(),
            "step must be positive"
        );
        StepClock { step_secs }
    }
}

impl Default for StepClock {
    fn default() -> Self {
        StepClock::new(1.0)
    }
}

impl Clock for StepClock {
    fn timer(&self) -> Box<dyn Timer> {
        Box::new(StepTimer {
            step_secs: self.step_secs,
            polls: 0,
        })
    }
}

struct StepTimer {
    step_secs: f64,
    polls: u64,
}

impl Timer for StepTimer {
    fn elapsed_secs(&mut self) -> f64 {
        self.polls += 1;
        self.polls as f64 * self.step_secs
    }
}
