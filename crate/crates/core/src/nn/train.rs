//! Mini-batch training loop.
//!
//! Batch order is a pure function of `(seed, epoch)`, so any iteration range
//! of a run can be replayed: rewinding methods restart at iteration `r` and see
//! exactly the batches and learning rates the first pass saw.

use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::data::Dataset;
use crate::nn::loss::argmax;
use crate::nn::network::Network;
use crate::nn::optim::Sgd;
use crate::nn::schedule::LrSchedule;
use crate::rng;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const AUGMENT_STREAM: u64 = 0x4155_474d;

/// A per-sample stochastic transform applied when batches are formed.
pub trait SampleTransform: Sync {
    /// `seed` is unique to (run, iteration, position in batch).
    fn apply(&self, image: &[f32], seed: u64) -> Vec<f32>;
}

/// Something that consumes one mini-batch at a given learning rate.
pub trait Learner {
    fn step(&mut self, batch: &Tensor, labels: &[usize], lr: f32) -> Result<f64>;
}

/// Ordinary weight training: masked weights stay frozen.
#[derive(Debug, Clone)]
pub struct WeightLearner {
    pub net: Network,
    pub opt: Sgd,
}

impl Learner for WeightLearner {
    fn step(&mut self, batch: &Tensor, labels: &[usize], lr: f32) -> Result<f64> {
        let (loss, grads) = self.net.loss_and_grads(batch, labels)?;
        if loss.is_finite() {
            self.opt.step_network(&mut self.net, &grads, lr, true);
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Per-iteration record of a training range.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iterations: Vec<usize>,
    pub lrs: Vec<f64>,
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn extend(&mut self, other: TrainLog) {
        self.iterations.extend(other.iterations);
        self.lrs.extend(other.lrs);
        self.losses.extend(other.losses);
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Fixed data, schedule and shuffling for a family of training ranges.
pub struct SgdRun<'a> {
    data: &'a Dataset,
    schedule: &'a LrSchedule,
    batch_size: usize,
    seed: u64,
    transform: Option<&'a dyn SampleTransform>,
}

impl<'a> SgdRun<'a> {
    pub fn new(
        data: &'a Dataset,
        schedule: &'a LrSchedule,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        schedule.validate()?;
        Ok(Self {
            data,
            schedule,
            batch_size,
            seed,
            transform: None,
        })
    }

    pub fn with_transform(mut self, t: Option<&'a dyn SampleTransform>) -> Self {
        self.transform = t;
        self
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }

    /// Iterations covered by the schedule's epoch count (fractional epochs truncate).
    pub fn total_iterations(&self) -> usize {
        (self.schedule.total_epochs() * self.iterations_per_epoch() as f64).floor() as usize
    }

    pub fn lr_at_iteration(&self, it: usize) -> Result<f64> {
        self.schedule
            .lr_at(it as f64 / self.iterations_per_epoch() as f64)
    }

    fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        idx.shuffle(&mut rng::stream(self.seed, &[SHUFFLE_STREAM, epoch as u64]));
        idx
    }

    fn make_batch(&self, it: usize, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (batch, labels) = self.data.batch(indices);
        let Some(t) = self.transform else {
            return (batch, labels);
        };
        let rows: Vec<Vec<f32>> = (0..indices.len())
            .map(|pos| {
                let s = rng::derive(self.seed, &[AUGMENT_STREAM, it as u64, pos as u64]);
                t.apply(batch.row(pos), s)
            })
            .collect();
        let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        (
            Tensor::stack(self.data.sample_shape(), &refs).expect("transform keeps shape"),
            labels,
        )
    }

    /// Run iterations `iters`. `before(it, learner)` is invoked at the start of
    /// every iteration, before its update.
    pub fn run<L: Learner>(
        &self,
        learner: &mut L,
        iters: Range<usize>,
        mut before: impl FnMut(usize, &mut L) -> Result<()>,
    ) -> Result<TrainLog> {
        let ipe = self.iterations_per_epoch();
        let mut log = TrainLog::default();
        let mut cached: Option<(usize, Vec<usize>)> = None;
        for it in iters {
            before(it, learner)?;
            let epoch = it / ipe;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                cached = Some((epoch, self.permutation(epoch)));
            }
            let perm = &cached.as_ref().expect("cached").1;
            let pos = (it % ipe) * self.batch_size;
            let indices = &perm[pos..(pos + self.batch_size).min(perm.len())];
            let (batch, labels) = self.make_batch(it, indices);
            let lr = self.lr_at_iteration(it)?;
            let loss = learner.step(&batch, &labels, lr as f32)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    loss,
                });
            }
            log.iterations.push(it);
            log.lrs.push(lr);
            log.losses.push(loss);
        }
        Ok(log)
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    pub optimizer: Sgd,
    pub log: TrainLog,
    pub train_accuracy: f64,
}

/// Train `net` for `cfg.epochs` epochs of `sched`; deterministic in `cfg.seed`.
pub fn train(
    net: Network,
    data: &Dataset,
    opt: Sgd,
    sched: &LrSchedule,
    cfg: &TrainConfig,
) -> Result<Trained> {
    train_with(net, data, opt, sched, cfg, None)
}

pub fn train_with(
    net: Network,
    data: &Dataset,
    opt: Sgd,
    sched: &LrSchedule,
    cfg: &TrainConfig,
    transform: Option<&dyn SampleTransform>,
) -> Result<Trained> {
    if (cfg.epochs as f64) > sched.total_epochs() {
        return Err(Error::invalid(format!(
            "{} epochs requested but the schedule covers {}",
            cfg.epochs,
            sched.total_epochs()
        )));
    }
    let run = SgdRun::new(data, sched, cfg.batch_size, cfg.seed)?.with_transform(transform);
    let mut learner = WeightLearner { net, opt };
    let iters = cfg.epochs * run.iterations_per_epoch();
    let log = run.run(&mut learner, 0..iters, |_, _| Ok(()))?;
    let train_accuracy = evaluate(&learner.net, data)?;
    Ok(Trained {
        network: learner.net,
        optimizer: learner.opt,
        log,
        train_accuracy,
    })
}

const EVAL_CHUNK: usize = 128;

/// Predicted class per sample (argmax of logits, ties to the lowest index).
pub fn predict(net: &Network, data: &Dataset) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts: Vec<Result<Vec<usize>>> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (batch, _) = data.batch(chunk);
            let logits = net.forward(&batch)?;
            Ok(logits.data().chunks(logits.row_len()).map(argmax).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(data.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let correct = count_correct(net, data)?;
    Ok(correct as f64 / data.len() as f64)
}

pub fn count_correct(net: &Network, data: &Dataset) -> Result<usize> {
    let preds = predict(net, data)?;
    Ok(preds
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count())
}
