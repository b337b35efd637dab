use std::time::{Duration, Instant};

/// Accumulates time spent inside active train/validation sections only, and
/// remembers the running total at the best checkpoint.
#[derive(Debug, Default, Clone)]
pub struct WallclockTracker {
    active: Duration,
    running: Option<Instant>,
    at_best: Duration,
}

impl WallclockTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self) {
        if self.running.is_none() {
            self.running = Some(Instant::now());
        }
    }

    pub fn stop(&mut self) {
        if let Some(t) = self.running.take() {
            self.active += t.elapsed();
        }
    }

    /// Times `f` as active work.
    pub fn measure<R>(&mut self, f: impl FnOnce() -> R) -> R {
        self.start();
        let r = f();
        self.stop();
        r
    }

    pub fn total_s(&self) -> f64 {
        let live = self.running.map_or(Duration::ZERO, |t| t.elapsed());
        (self.active + live).as_secs_f64()
    }

    /// Records the current total as the time to the best checkpoint.
    pub fn mark_best(&mut self) {
        self.at_best = self.active + self.running.map_or(Duration::ZERO, |t| t.elapsed());
    }

    pub fn to_best_s(&self) -> f64 {
        self.at_best.as_secs_f64()
    }
}
