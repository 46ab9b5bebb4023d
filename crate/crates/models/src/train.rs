//! Shared training bookkeeping: logs, divergence checks and learning-rate
//! schedules.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TrainingLog {
    pub fn push(&mut self, epoch: usize, loss: f64, lr: f64, metrics: impl IntoIterator<Item = (&'static str, f64)>) {
        let metrics = metrics.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        log::info!("epoch {epoch}: loss {loss:.5} lr {lr:.2e} {metrics:?}");
        self.epochs.push(EpochLog { epoch, loss, lr, metrics });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn last_metric(&self, name: &str) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.metrics.get(name).copied())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Fails when a training loss is NaN or infinite.
pub fn check_loss(loss: f64, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            step,
            reason: format!("loss became {loss}"),
        })
    }
}

/// Halves the rate every `period` epochs.
pub fn step_decay(base: f64, epoch: usize, period: usize) -> f64 {
    if period == 0 {
        return base;
    }
    base * 0.5f64.powi((epoch / period) as i32)
}

/// Multiplies the rate by `factor` after `patience` epochs without a new
/// best monitored value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

impl ReduceOnPlateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        ReduceOnPlateau {
            factor,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records a monitored value and returns the new rate.
    pub fn observe(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best {
            self.best = value;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale > self.patience {
            self.stale = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}
