use serde::{Deserialize, Serialize};

/// Stops once validation AUROC has improved on the best value so far by less
/// than `threshold` for `patience` consecutive epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best: f64,
    pub stale: usize,
    pub threshold: f64,
    pub patience: usize,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new(0.001, 2)
    }
}

impl EarlyStopState {
    pub fn new(threshold: f64, patience: usize) -> Self {
        Self { best: f64::NEG_INFINITY, stale: 0, threshold, patience }
    }

    /// Feeds one epoch's validation AUROC; returns `true` when training should stop.
    pub fn update(&mut self, auroc: f64) -> bool {
        if auroc - self.best < self.threshold {
            self.stale += 1;
        } else {
            self.stale = 0;
        }
        self.best = self.best.max(auroc);
        self.stale >= self.patience
    }
}

/// The 1-based epoch after which the default rule stops on `trace`, if it does.
pub fn early_stop_epoch(trace: &[f64]) -> Option<usize> {
    let mut s = EarlyStopState::default();
    trace.iter().position(|&a| s.update(a)).map(|i| i + 1)
}
