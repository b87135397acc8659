use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub patience: usize,
    pub tolerance: f64,
    pub max_epochs: usize,
    best: f64,
    best_epoch: usize,
    since: usize,
    epochs: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize, tolerance: f64, max_epochs: usize) -> Self {
        Self {
            patience,
            tolerance,
            max_epochs,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            since: 0,
            epochs: 0,
        }
    }

    /// Records one epoch's validation AP. Improvement means exceeding the
    /// best by more than the tolerance.
    pub fn update(&mut self, val_ap: f64) -> StopDecision {
        self.epochs += 1;
        let improved = val_ap > self.best + self.tolerance;
        if improved {
            self.best = val_ap;
            self.best_epoch = self.epochs;
            self.since = 0;
        } else {
            self.since += 1;
        }
        StopDecision {
            improved,
            stop: self.since > self.patience || self.epochs >= self.max_epochs,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// 1-based epoch of the best AP, 0 before any update.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn since_improvement(&self) -> usize {
        self.since
    }
}
