//! Learning-rate decay on validation plateaus.

/// Multiplies the learning rate by `factor` once the validation loss has not
/// improved for more than `patience` consecutive epochs, counting only epochs
/// after the first `warmup_epochs`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub warmup_epochs: usize,
    /// Relative improvement a loss needs over the best so far to count.
    pub threshold: f64,
    epoch: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64) -> Self {
        PlateauSchedule {
            lr,
            factor: 0.1,
            patience: 4,
            warmup_epochs: 30,
            threshold: 1e-4,
            epoch: 0,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Records the validation loss of the epoch just finished and returns the
    /// learning rate for the next one.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        self.epoch += 1;
        let improved = val_loss < self.best * (1.0 - self.threshold.copysign(self.best));
        if improved {
            self.best = val_loss;
        }
        if self.epoch <= self.warmup_epochs || improved {
            self.bad_epochs = 0;
            return self.lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
        }
        self.lr
    }
}
