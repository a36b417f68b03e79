use serde::{Deserialize, Serialize};

/// Halve the learning rate when validation loss stalls.
///
/// An epoch improves when its loss is below the best so far by at least
/// `threshold`. After `patience` consecutive non-improving epochs the rate is
/// multiplied by `factor` (not going below `min_lr`) and the count restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler { factor: 0.5, patience: 20, threshold: 1e-6, min_lr: 1e-6, best: f64::INFINITY, bad_epochs: 0 }
    }
}

impl PlateauScheduler {
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Learning rate after replaying a whole validation history.
pub fn lr_on_plateau(history: &[f64], initial_lr: f64, sched: &mut PlateauScheduler) -> f64 {
    history.iter().fold(initial_lr, |lr, &l| sched.observe(l, lr))
}
