use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{LrSchedule, Network, SgdRun, WeightLearner};
use crate::prune::config::{Method, PruneOutcome, PruneReport, TrainInput, TrainSpec};
use crate::prune::mask::{apply_masks, magnitude_mask_to_total, PruneScope};
use crate::rng;

const FINETUNE_STREAM: u64 = 0x4654_554e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtConfig {
    pub train: TrainSpec,
    pub target: f64,
    pub scope: PruneScope,
    /// Defaults to a quarter of the training epochs (at least one).
    pub finetune_epochs: Option<usize>,
    pub seed: u64,
}

impl FtConfig {
    pub fn finetune_epochs(&self) -> usize {
        self.finetune_epochs
            .unwrap_or_else(|| (self.train.epochs / 4).max(1))
    }
}

/// Plain weight training with no compression.
pub fn run_dense<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    train: &TrainSpec,
    seed: u64,
) -> Result<PruneOutcome> {
    let input = input.into();
    let lr = train.lr_schedule();
    let run = SgdRun::new(input.data, &lr, train.batch_size, seed)?.with_transform(input.transform);
    let mut learner = WeightLearner {
        net,
        opt: train.optimizer()?,
    };
    let total = train.epochs * run.iterations_per_epoch();
    let log = run.run(&mut learner, 0..total, |_, _| Ok(()))?;
    Ok(PruneOutcome {
        report: PruneReport {
            method: Method::Dense,
            scope: PruneScope::Global,
            nominal_sparsity: 0.0,
            achieved_sparsity: learner.net.sparsity(),
            shots: 0,
            log,
            sparsity_trace: Vec::new(),
        },
        network: learner.net,
        latent: None,
    })
}

/// Train, prune once by magnitude to the target, then fine-tune at the final
/// learning rate held constant.
pub fn run_ft<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    cfg: &FtConfig,
) -> Result<PruneOutcome> {
    let input = input.into();
    let lr = cfg.train.lr_schedule();
    let run = SgdRun::new(input.data, &lr, cfg.train.batch_size, cfg.seed)?
        .with_transform(input.transform);
    let total = cfg.train.epochs * run.iterations_per_epoch();
    let mut learner = WeightLearner {
        net,
        opt: cfg.train.optimizer()?,
    };
    let mut log = run.run(&mut learner, 0..total, |_, _| Ok(()))?;

    let masks = magnitude_mask_to_total(&learner.net, cfg.target, cfg.scope)?;
    apply_masks(&mut learner.net, masks)?;
    learner.opt.zero_masked(&learner.net);
    let trace = vec![(total, learner.net.sparsity())];

    let final_lr = run.lr_at_iteration(total.saturating_sub(1))?;
    let ft_epochs = cfg.finetune_epochs();
    let ft_lr = LrSchedule::Constant {
        lr: final_lr,
        total_epochs: ft_epochs as f64,
    };
    let ft_run = SgdRun::new(
        input.data,
        &ft_lr,
        cfg.train.batch_size,
        rng::derive(cfg.seed, &[FINETUNE_STREAM]),
    )?
    .with_transform(input.transform);
    let ft_total = ft_epochs * ft_run.iterations_per_epoch();
    let mut ft_log = ft_run.run(&mut learner, 0..ft_total, |_, _| Ok(()))?;
    for it in &mut ft_log.iterations {
        *it += total;
    }
    log.extend(ft_log);

    Ok(PruneOutcome {
        report: PruneReport {
            method: Method::Ft,
            scope: cfg.scope,
            nominal_sparsity: cfg.target,
            achieved_sparsity: learner.net.sparsity(),
            shots: 1,
            log,
            sparsity_trace: trace,
        },
        network: learner.net,
        latent: None,
    })
}
