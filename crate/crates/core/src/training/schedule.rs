use serde::{Deserialize, Serialize};

/// Halves the learning rate when the evaluation loss has not improved by a
/// relative `threshold` for `patience` consecutive evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub best: f64,
    pub bad_evals: usize,
}

impl LrPlateau {
    pub fn new(lr: f64, patience: usize) -> Self {
        LrPlateau {
            lr,
            factor: 0.5,
            patience,
            threshold: 1e-4,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    /// Records one evaluation loss; returns `true` if the rate was reduced.
    pub fn step(&mut self, loss: f64) -> bool {
        if loss < self.best * (1.0 - self.threshold) || (self.best.is_infinite() && loss.is_finite()) {
            self.best = loss;
            self.bad_evals = 0;
            return false;
        }
        self.bad_evals += 1;
        if self.bad_evals >= self.patience {
            self.lr *= self.factor;
            self.bad_evals = 0;
            return true;
        }
        false
    }
}
