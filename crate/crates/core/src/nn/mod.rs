//! Minimal deterministic training engine.
//!
//! Storage is `f32` and every reduction (dot products, gradient sums, pooling)
//! accumulates in `f64`. There is no autodiff: each layer kind carries its own
//! hand-written backward pass.

mod arch;
pub mod checkpoint;
mod data;
pub mod init;
mod layer;
pub mod loss;
mod network;
mod optim;
mod schedule;
mod train;

pub use arch::Architecture;
pub use data::Dataset;
pub use layer::{Layer, Mask, Params, Precision};
pub use network::{Network, ParamGrad};
pub use optim::Sgd;
pub use schedule::LrSchedule;
pub use train::{
    count_correct, evaluate, predict, train, train_with, Learner, SampleTransform, SgdRun,
    TrainConfig, TrainLog, Trained, WeightLearner,
};
