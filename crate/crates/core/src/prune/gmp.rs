use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Network, SgdRun, WeightLearner};
use crate::prune::config::{Method, PruneOutcome, PruneReport, TrainInput, TrainSpec};
use crate::prune::mask::{apply_masks, magnitude_mask_to_total, PruneScope};

/// Cubic sparsity schedule over pruning steps `t0 + k * interval`, `k = 0..=steps`:
///
/// `s_t = s_f + (s_i - s_f) * (1 - (t - t0) / (steps * interval))^3`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmpSchedule {
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_sparsity: f64,
    pub t0: usize,
    pub steps: usize,
    pub interval: usize,
}

impl GmpSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.initial) {
            return Err(Error::invalid(format!(
                "initial sparsity {} outside [0, 1)",
                self.initial
            )));
        }
        if !(self.final_sparsity > 0.0 && self.final_sparsity <= 1.0) {
            return Err(Error::invalid(format!(
                "final sparsity {} outside (0, 1]",
                self.final_sparsity
            )));
        }
        if self.initial > self.final_sparsity {
            return Err(Error::invalid("initial sparsity exceeds final sparsity"));
        }
        if self.steps == 0 || self.interval == 0 {
            return Err(Error::invalid(
                "gmp needs at least one step and a positive interval",
            ));
        }
        Ok(())
    }

    /// Maps the 160-epoch recipe `(t0, n, dt) = (5, 105, 1)` onto a run of
    /// `total_iterations`, preserving where pruning starts and stops.
    pub fn scaled(final_sparsity: f64, total_iterations: usize) -> Self {
        let span = (total_iterations * 105 / 160).max(1);
        let steps = span.min(105);
        Self {
            initial: 0.0,
            final_sparsity,
            t0: total_iterations * 5 / 160,
            steps,
            interval: (span / steps).max(1),
        }
    }

    pub fn last_step(&self) -> usize {
        self.t0 + self.steps * self.interval
    }

    pub fn is_pruning_step(&self, t: usize) -> bool {
        t >= self.t0 && t <= self.last_step() && (t - self.t0).is_multiple_of(self.interval)
    }

    pub fn pruning_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.steps).map(move |k| self.t0 + k * self.interval)
    }

    pub fn sparsity_at(&self, t: usize) -> Result<f64> {
        if !self.is_pruning_step(t) {
            return Err(Error::NotAPruningStep { step: t });
        }
        let progress = (t - self.t0) as f64 / (self.steps * self.interval) as f64;
        Ok(self.final_sparsity + (self.initial - self.final_sparsity) * (1.0 - progress).powi(3))
    }
}

/// Free-function form of [`GmpSchedule::sparsity_at`].
pub fn gmp_sparsity(t: usize, sched: &GmpSchedule) -> Result<f64> {
    sched.sparsity_at(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmpConfig {
    pub train: TrainSpec,
    pub target: f64,
    pub scope: PruneScope,
    /// Defaults to [`GmpSchedule::scaled`] when absent.
    pub schedule: Option<GmpSchedule>,
    pub seed: u64,
}

/// Prune by magnitude throughout training, following the cubic schedule.
pub fn run_gmp<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    cfg: &GmpConfig,
) -> Result<PruneOutcome> {
    let input = input.into();
    let lr = cfg.train.lr_schedule();
    let run = SgdRun::new(input.data, &lr, cfg.train.batch_size, cfg.seed)?
        .with_transform(input.transform);
    let total = cfg.train.epochs * run.iterations_per_epoch();
    let schedule = cfg
        .schedule
        .unwrap_or_else(|| GmpSchedule::scaled(cfg.target, total));
    schedule.validate()?;
    if (schedule.final_sparsity - cfg.target).abs() > 0.0 {
        return Err(Error::invalid("gmp final sparsity must equal the target"));
    }
    if schedule.last_step() >= total {
        return Err(Error::invalid(format!(
            "gmp schedule ends at step {} but training has {total} iterations",
            schedule.last_step()
        )));
    }
    let mut learner = WeightLearner {
        net,
        opt: cfg.train.optimizer()?,
    };
    let mut trace = Vec::new();
    let log = run.run(&mut learner, 0..total, |it, l| {
        if schedule.is_pruning_step(it) {
            let s = schedule.sparsity_at(it)?;
            let masks = magnitude_mask_to_total(&l.net, s, cfg.scope)?;
            apply_masks(&mut l.net, masks)?;
            l.opt.zero_masked(&l.net);
            trace.push((it, l.net.sparsity()));
        }
        Ok(())
    })?;
    let network = learner.net;
    Ok(PruneOutcome {
        report: PruneReport {
            method: Method::Gmp,
            scope: cfg.scope,
            nominal_sparsity: cfg.target,
            achieved_sparsity: network.sparsity(),
            shots: trace.len(),
            log,
            sparsity_trace: trace,
        },
        network,
        latent: None,
    })
}
