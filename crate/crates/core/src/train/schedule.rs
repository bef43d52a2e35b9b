//! Plateau learning-rate reduction and early stopping on a monitored loss.

use serde::{Deserialize, Serialize};

use crate::config::{EarlyStopConfig, SchedulerConfig};

/// Multiplies the learning rate by `factor` once the monitored value has
/// not improved for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub cfg: SchedulerConfig,
    #[serde(deserialize_with = "super::null_as_inf")]
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: SchedulerConfig) -> Self {
        Self {
            cfg,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the learning rate for the next epoch.
    pub fn step(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best {
            self.best = value;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.cfg.patience {
            self.bad_epochs = 0;
            (lr * self.cfg.factor).max(self.cfg.min_lr)
        } else {
            lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopper {
    pub cfg: EarlyStopConfig,
    #[serde(deserialize_with = "super::null_as_inf")]
    pub best: f64,
    pub bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(cfg: EarlyStopConfig) -> Self {
        Self {
            cfg,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch; true once the counter exceeds the patience.
    pub fn step(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        self.bad_epochs > self.cfg.patience
    }
}
