use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, Sgd, SgdRun, WeightLearner};
use crate::prune::config::{Method, PruneOutcome, PruneReport, TrainInput, TrainSpec};
use crate::prune::mask::{apply_masks, magnitude_mask_to_total, PruneScope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewindMode {
    /// Restore surviving weights and the learning-rate schedule (LTH).
    WeightsAndLr,
    /// Keep trained weights, restart only the learning-rate schedule (LRR).
    LrOnly,
}

impl RewindMode {
    pub fn method(&self) -> Method {
        match self {
            RewindMode::WeightsAndLr => Method::Lth,
            RewindMode::LrOnly => Method::Lrr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewindConfig {
    pub train: TrainSpec,
    /// Iteration `r` to rewind to. Defaults to 3% of the training iterations.
    pub rewind_iter: Option<usize>,
    pub per_shot_rate: f64,
    pub target_sparsity: f64,
    pub mode: RewindMode,
    /// Overrides the shot count derived from the target.
    pub shots: Option<usize>,
    pub scope: PruneScope,
    pub seed: u64,
}

impl RewindConfig {
    pub fn new(train: TrainSpec, target_sparsity: f64, mode: RewindMode, seed: u64) -> Self {
        Self {
            train,
            rewind_iter: None,
            per_shot_rate: 0.2,
            target_sparsity,
            mode,
            shots: None,
            scope: PruneScope::Global,
            seed,
        }
    }

    pub fn shots(&self) -> Result<usize> {
        match self.shots {
            Some(0) => Err(Error::invalid("at least one shot is required")),
            Some(n) => Ok(n),
            None => shots_for(self.target_sparsity, self.per_shot_rate),
        }
    }

    pub fn rewind_iter(&self, total_iterations: usize) -> usize {
        self.rewind_iter.unwrap_or(total_iterations * 3 / 100)
    }
}

/// Smallest `n` with `1 - (1 - rate)^n >= target`.
pub fn shots_for(target: f64, rate: f64) -> Result<usize> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Sparsity(target));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!(
            "per-shot rate {rate} outside (0, 1)"
        )));
    }
    let n = ((1.0 - target).ln() / (1.0 - rate).ln()).ceil();
    let mut n = n.max(1.0) as usize;
    // Guard the ceiling against rounding in the logarithms.
    let tol = 1e-12;
    while achieved_sparsity(rate, n) < target - tol {
        n += 1;
    }
    while n > 1 && achieved_sparsity(rate, n - 1) >= target - tol {
        n -= 1;
    }
    Ok(n)
}

/// `1 - (1 - rate)^shots`.
pub fn achieved_sparsity(rate: f64, shots: usize) -> f64 {
    1.0 - (1.0 - rate).powi(shots as i32)
}

/// Network states around one rewind.
pub struct ShotEvent<'a> {
    pub shot: usize,
    /// Weights at the end of the training pass, before pruning.
    pub trained: &'a Network,
    /// Pruned and rewound, ready for retraining.
    pub rewound: &'a Network,
    /// State captured at the rewind iteration of the first pass.
    pub checkpoint: &'a Network,
}

/// Copy weights and biases from `src`, keeping `dst`'s masks.
fn restore_weights(dst: &mut Network, src: &Network) {
    for ((_, d), (_, s)) in dst.prunable_mut().zip(src.prunable()) {
        d.weight = s.weight.clone();
        d.bias = s.bias.clone();
    }
}

pub fn run_rewinding<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    cfg: &RewindConfig,
) -> Result<PruneOutcome> {
    run_rewinding_observed(net, input, cfg, |_| {})
}

/// Iterative magnitude pruning with rewinding. Shot `k` prunes to overall
/// sparsity `1 - (1 - rate)^k`, then rewinds to iteration `r` and retrains
/// `r..T` on the same batches and learning rates as the first pass.
pub fn run_rewinding_observed<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    cfg: &RewindConfig,
    mut observe: impl FnMut(&ShotEvent<'_>),
) -> Result<PruneOutcome> {
    let input = input.into();
    let shots = cfg.shots()?;
    let lr = cfg.train.lr_schedule();
    let run = SgdRun::new(input.data, &lr, cfg.train.batch_size, cfg.seed)?
        .with_transform(input.transform);
    let total = cfg.train.epochs * run.iterations_per_epoch();
    let r = cfg.rewind_iter(total);
    if r >= total {
        return Err(Error::invalid(format!(
            "rewind iteration {r} must precede the {total} training iterations"
        )));
    }

    let mut learner = WeightLearner {
        net,
        opt: cfg.train.optimizer()?,
    };
    let mut checkpoint: Option<(Network, Sgd)> = None;
    let mut log = run.run(&mut learner, 0..total, |it, l| {
        if it == r {
            checkpoint = Some((l.net.clone(), l.opt.clone()));
        }
        Ok(())
    })?;
    let (ckpt_net, ckpt_opt) = checkpoint.ok_or(Error::MissingCheckpoint(r))?;

    let mut trace = Vec::with_capacity(shots);
    for shot in 1..=shots {
        let s = achieved_sparsity(cfg.per_shot_rate, shot);
        let masks = magnitude_mask_to_total(&learner.net, s, cfg.scope)?;
        let trained = learner.net.clone();
        apply_masks(&mut learner.net, masks)?;
        if cfg.mode == RewindMode::WeightsAndLr {
            restore_weights(&mut learner.net, &ckpt_net);
        }
        learner.opt = ckpt_opt.clone();
        learner.opt.zero_masked(&learner.net);
        trace.push((total + (shot - 1) * (total - r), learner.net.sparsity()));
        observe(&ShotEvent {
            shot,
            trained: &trained,
            rewound: &learner.net,
            checkpoint: &ckpt_net,
        });
        log.extend(run.run(&mut learner, r..total, |_, _| Ok(()))?);
    }

    Ok(PruneOutcome {
        report: PruneReport {
            method: cfg.mode.method(),
            scope: cfg.scope,
            nominal_sparsity: cfg.target_sparsity,
            achieved_sparsity: learner.net.sparsity(),
            shots,
            log,
            sparsity_trace: trace,
        },
        network: learner.net,
        latent: None,
    })
}
