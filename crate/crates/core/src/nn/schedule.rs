use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate as a function of (fractional) epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
        total_epochs: f64,
    },
    /// `base_lr * 0.5 * (1 + cos(pi * epoch / total_epochs))`.
    Cosine {
        base_lr: f64,
        total_epochs: f64,
    },
    /// Piecewise constant: `base_lr` until the first `(fraction, lr)` point,
    /// then each point's rate once `epoch >= fraction * total_epochs`.
    Step {
        base_lr: f64,
        total_epochs: f64,
        points: Vec<(f64, f64)>,
    },
}

impl LrSchedule {
    /// Drops to a tenth of the base rate at half of training and to a
    /// hundredth at three quarters (80/120 of a 160 epoch run).
    pub fn step160(base_lr: f64, total_epochs: f64) -> Self {
        LrSchedule::Step {
            base_lr,
            total_epochs,
            points: vec![(0.5, base_lr * 0.1), (0.75, base_lr * 0.01)],
        }
    }

    pub fn total_epochs(&self) -> f64 {
        match self {
            LrSchedule::Constant { total_epochs, .. }
            | LrSchedule::Cosine { total_epochs, .. }
            | LrSchedule::Step { total_epochs, .. } => *total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total = self.total_epochs();
        if !(total > 0.0) {
            return Err(Error::invalid("schedule needs a positive epoch count"));
        }
        let rates: Vec<f64> = match self {
            LrSchedule::Constant { lr, .. } => vec![*lr],
            LrSchedule::Cosine { base_lr, .. } => vec![*base_lr],
            LrSchedule::Step {
                base_lr, points, ..
            } => {
                if points.windows(2).any(|w| w[0].0 > w[1].0) {
                    return Err(Error::invalid("step points must be sorted by fraction"));
                }
                std::iter::once(*base_lr)
                    .chain(points.iter().map(|p| p.1))
                    .collect()
            }
        };
        if rates.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: f64) -> Result<f64> {
        let total = self.total_epochs();
        if !(0.0..total).contains(&epoch) {
            return Err(Error::EpochOutOfRange { epoch, total });
        }
        Ok(match self {
            LrSchedule::Constant { lr, .. } => *lr,
            LrSchedule::Cosine { base_lr, .. } => {
                base_lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch / total).cos())
            }
            LrSchedule::Step {
                base_lr, points, ..
            } => points
                .iter()
                .take_while(|(frac, _)| epoch >= frac * total)
                .last()
                .map_or(*base_lr, |p| p.1),
        })
    }
}
