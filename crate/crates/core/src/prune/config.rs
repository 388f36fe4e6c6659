use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dataset, LrSchedule, Network, SampleTransform, Sgd, TrainLog};
use crate::prune::mask::PruneScope;

/// The compression strategies, plus the uncompressed baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    /// Prune once after training, then fine-tune.
    Ft,
    /// Gradual magnitude pruning on a cubic schedule.
    Gmp,
    /// Iterative pruning with weight (and learning-rate) rewinding.
    Lth,
    /// Iterative pruning with learning-rate rewinding only.
    Lrr,
    /// Edge-popup: learn a mask over frozen signed-constant weights.
    Ep,
    /// Biprop: learn a mask over frozen weights, binarized with a per-layer gain.
    Bp,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Dense,
        Method::Ft,
        Method::Gmp,
        Method::Lth,
        Method::Lrr,
        Method::Ep,
        Method::Bp,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::Ft => "ft",
            Method::Gmp => "gmp",
            Method::Lth => "lth",
            Method::Lrr => "lrr",
            Method::Ep => "ep",
            Method::Bp => "bp",
        }
    }

    /// Methods that never train weights.
    pub fn is_initialization_based(&self) -> bool {
        matches!(self, Method::Ep | Method::Bp)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                what: "method",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cosine,
    Step160,
}

/// Optimizer and schedule settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: ScheduleKind,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 0.05,
            schedule: ScheduleKind::Step160,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl TrainSpec {
    pub fn lr_schedule(&self) -> LrSchedule {
        let total = self.epochs as f64;
        match self.schedule {
            ScheduleKind::Constant => LrSchedule::Constant {
                lr: self.lr,
                total_epochs: total,
            },
            ScheduleKind::Cosine => LrSchedule::Cosine {
                base_lr: self.lr,
                total_epochs: total,
            },
            ScheduleKind::Step160 => LrSchedule::step160(self.lr, total),
        }
    }

    pub fn optimizer(&self) -> Result<Sgd> {
        Sgd::new(self.momentum, self.weight_decay)
    }
}

/// Training data plus an optional on-the-fly augmentation.
#[derive(Clone, Copy)]
pub struct TrainInput<'a> {
    pub data: &'a Dataset,
    pub transform: Option<&'a dyn SampleTransform>,
}

impl<'a> From<&'a Dataset> for TrainInput<'a> {
    fn from(data: &'a Dataset) -> Self {
        Self {
            data,
            transform: None,
        }
    }
}

/// Summary of one compression run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub method: Method,
    pub scope: PruneScope,
    pub nominal_sparsity: f64,
    pub achieved_sparsity: f64,
    pub shots: usize,
    /// Learning rate, loss and iteration for every update performed.
    pub log: TrainLog,
    /// `(iteration, sparsity)` after each pruning event.
    pub sparsity_trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub network: Network,
    pub report: PruneReport,
    /// For popup methods, the frozen full-precision weights together with the
    /// learned scores and final masks.
    pub latent: Option<Network>,
}
