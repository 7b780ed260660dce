//! Multiplicative learning-rate decay on plateaus.

use serde::{Deserialize, Serialize};

/// Cuts the learning rate by `factor` once the monitored metric has gone
/// `patience` epochs without a relative improvement of at least `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub min_lr: f64,
    pub patience: usize,
    pub threshold: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, min_lr: f64, patience: usize, threshold: f64) -> Self {
        PlateauScheduler {
            factor,
            min_lr,
            patience,
            threshold,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Forgets the best value seen so far (the learning rate is kept).
    pub fn reset(&mut self) {
        self.best = None;
        self.bad_epochs = 0;
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        let improved = self.best.is_none_or(|b| metric < b - self.threshold * b.abs());
        if improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (lr * self.factor).max(self.min_lr).min(lr);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_plateau_cuts_by_factor() {
        let mut s = PlateauScheduler::new(0.8, 2e-5, 5, 1e-3);
        let mut lr = 1e-4;
        lr = s.observe(1.0, lr);
        for _ in 0..5 {
            lr = s.observe(1.0, lr);
        }
        assert!((lr - 8e-5).abs() < 1e-18);
    }

    #[test]
    fn floor_is_respected() {
        let mut s = PlateauScheduler::new(0.8, 2e-5, 1, 1e-3);
        let mut lr = 2e-5;
        for _ in 0..10 {
            lr = s.observe(1.0, lr);
        }
        assert_eq!(lr, 2e-5);
    }

    #[test]
    fn small_improvements_count_as_plateau() {
        let mut s = PlateauScheduler::new(0.8, 2e-5, 2, 1e-3);
        let mut lr = 1e-4;
        lr = s.observe(1.0, lr);
        lr = s.observe(0.9999, lr);
        lr = s.observe(0.9998, lr);
        assert!(lr < 1e-4);
        let lr2 = s.observe(0.5, lr);
        assert_eq!(lr2, lr);
    }

    proptest::proptest! {
        #[test]
        fn learning_rate_never_increases(metrics in proptest::collection::vec(0.0f64..10.0, 1..200)) {
            let mut s = PlateauScheduler::new(0.8, 2e-5, 3, 1e-3);
            let mut lr = 1e-4;
            for m in metrics {
                let next = s.observe(m, lr);
                proptest::prop_assert!(next <= lr && next >= 2e-5);
                lr = next;
            }
        }
    }
}
