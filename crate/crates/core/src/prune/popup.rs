//! Mask learning over frozen weights (edge-popup and its binarized variant).
//!
//! Each prunable layer carries a score per weight. The forward pass keeps the
//! weights with the largest `|score|`; the backward pass treats the mask as the
//! identity, so the score gradient is `dL/dw_eff * w_base * sign(score)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::uniform_scores;
use crate::nn::{Learner, Network, Precision, Sgd, SgdRun};
use crate::prune::config::{Method, PruneOutcome, PruneReport, TrainInput, TrainSpec};
use crate::prune::mask::{apply_masks, top_score_mask, PruneScope};
use crate::rng;
use crate::tensor::Tensor;

const SCORE_INIT_STREAM: u64 = 0x5049_4e49;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopupConfig {
    pub train: TrainSpec,
    pub sparsity: f64,
    pub scope: PruneScope,
    pub seed: u64,
}

/// Mean `|w|` over kept positions.
pub fn binary_gain(weight: &[f32], keep: &[bool]) -> Option<f64> {
    let (sum, n) = weight
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .fold((0.0f64, 0usize), |(s, n), (&w, _)| {
            (s + (w as f64).abs(), n + 1)
        });
    (n > 0).then(|| sum / n as f64)
}

fn sign(v: f32) -> f32 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Score training state. `latent` holds the frozen weights and the scores;
/// `work` is what the forward pass sees.
#[derive(Debug, Clone)]
pub struct PopupLearner {
    latent: Network,
    work: Network,
    opt: Sgd,
    sparsity: f64,
    scope: PruneScope,
    binarize: bool,
}

impl PopupLearner {
    /// Scores missing from `net` are drawn uniformly from `seed`.
    pub fn new(
        mut net: Network,
        opt: Sgd,
        sparsity: f64,
        scope: PruneScope,
        binarize: bool,
        seed: u64,
    ) -> Result<Self> {
        if net.prunable().any(|(_, p)| p.scores.is_none()) {
            let mut scored = net.clone();
            uniform_scores(&mut scored, rng::derive(seed, &[SCORE_INIT_STREAM]));
            for ((_, p), (_, s)) in net.prunable_mut().zip(scored.prunable()) {
                if p.scores.is_none() {
                    p.scores = s.scores.clone();
                }
            }
        }
        if !binarize {
            for (idx, p) in net.prunable() {
                if !matches!(p.precision, Precision::Binary1 { .. }) {
                    return Err(Error::invalid(format!(
                        "layer {idx} is not signed-constant initialized"
                    )));
                }
            }
        }
        let mut l = Self {
            work: net.clone(),
            latent: net,
            opt,
            sparsity,
            scope,
            binarize,
        };
        l.refresh()?;
        Ok(l)
    }

    pub fn latent(&self) -> &Network {
        &self.latent
    }

    pub fn network(&self) -> &Network {
        &self.work
    }

    pub fn into_parts(self) -> (Network, Network) {
        (self.work, self.latent)
    }

    /// Recompute masks from the current scores and, when binarizing, the gains.
    fn refresh(&mut self) -> Result<()> {
        let masks = {
            let scores: Vec<&[f32]> = self
                .latent
                .prunable()
                .map(|(_, p)| p.scores.as_ref().expect("scores").data())
                .collect();
            top_score_mask(&scores, self.sparsity, self.scope)?
        };
        apply_masks(&mut self.latent, masks.clone())?;
        apply_masks(&mut self.work, masks)?;
        if !self.binarize {
            return Ok(());
        }
        for ((idx, w), (_, l)) in self.work.prunable_mut().zip(self.latent.prunable()) {
            let keep = l.mask.as_ref().expect("mask").keep();
            let alpha = binary_gain(l.weight.data(), keep)
                .filter(|a| *a > 0.0)
                .ok_or(Error::DegenerateLayer { layer: idx })?;
            let a = alpha as f32;
            let data = l.weight.data().iter().map(|&v| sign(v) * a).collect();
            w.weight = Tensor::new(l.weight.shape().to_vec(), data)?;
            w.precision = Precision::Binary1 { alpha };
        }
        Ok(())
    }
}

impl Learner for PopupLearner {
    fn step(&mut self, batch: &Tensor, labels: &[usize], lr: f32) -> Result<f64> {
        let (loss, grads) = self.work.loss_and_grads(batch, labels)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        let mut score_grads = Vec::new();
        for (idx, p) in self.work.prunable() {
            let g = grads[idx].as_ref().expect("parametric layer gradient");
            let s = self.latent.layers()[idx]
                .params()
                .and_then(|q| q.scores.as_ref())
                .expect("scores");
            let gs: Vec<f32> = g
                .weight
                .iter()
                .zip(p.weight.data())
                .zip(s.data())
                .map(|((&gw, &w), &sv)| gw * w * sign(sv))
                .collect();
            score_grads.push((idx, gs));
        }
        for (idx, gs) in score_grads {
            let p = self.latent.layers_mut()[idx].params_mut().expect("params");
            let s = p.scores.as_mut().expect("scores");
            self.opt.step_slot(idx, s.data_mut(), &gs, lr, None);
        }
        self.refresh()?;
        Ok(loss)
    }
}

fn run_popup<'a>(
    net: Network,
    input: TrainInput<'a>,
    cfg: &PopupConfig,
    binarize: bool,
    mut observe: impl FnMut(usize, &PopupLearner),
) -> Result<PruneOutcome> {
    let lr = cfg.train.lr_schedule();
    let run = SgdRun::new(input.data, &lr, cfg.train.batch_size, cfg.seed)?
        .with_transform(input.transform);
    let total = cfg.train.epochs * run.iterations_per_epoch();
    let mut learner = PopupLearner::new(
        net,
        cfg.train.optimizer()?,
        cfg.sparsity,
        cfg.scope,
        binarize,
        cfg.seed,
    )?;
    let log = run.run(&mut learner, 0..total, |it, l| {
        observe(it, l);
        Ok(())
    })?;
    observe(total, &learner);
    let (network, latent) = learner.into_parts();
    Ok(PruneOutcome {
        report: PruneReport {
            method: if binarize { Method::Bp } else { Method::Ep },
            scope: cfg.scope,
            nominal_sparsity: cfg.sparsity,
            achieved_sparsity: network.sparsity(),
            shots: 1,
            log,
            sparsity_trace: vec![(total, network.sparsity())],
        },
        network,
        latent: Some(latent),
    })
}

/// Edge-popup over signed-constant weights (see [`crate::nn::init::signed_constant`]).
pub fn run_ep<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    cfg: &PopupConfig,
) -> Result<PruneOutcome> {
    run_popup(net, input.into(), cfg, false, |_, _| {})
}

/// Mask learning over full-precision weights, binarized to `±alpha` per layer
/// with `alpha = mean |w|` over the kept weights.
pub fn run_bp<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    cfg: &PopupConfig,
) -> Result<PruneOutcome> {
    run_popup(net, input.into(), cfg, true, |_, _| {})
}

/// [`run_ep`] / [`run_bp`] with a hook called before every iteration and once
/// after the last.
pub fn run_popup_observed<'a>(
    net: Network,
    input: impl Into<TrainInput<'a>>,
    cfg: &PopupConfig,
    binarize: bool,
    observe: impl FnMut(usize, &PopupLearner),
) -> Result<PruneOutcome> {
    run_popup(net, input.into(), cfg, binarize, observe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_is_mean_abs() {
        assert_eq!(binary_gain(&[1.0, -2.0, 3.0], &[true; 3]), Some(2.0));
        assert_eq!(
            binary_gain(&[1.0, -2.0, 3.0], &[false, true, false]),
            Some(2.0)
        );
        assert_eq!(binary_gain(&[1.0], &[false]), None);
    }

    #[test]
    fn positive_constant_weights_survive_binarization() {
        let mut net = Network::mlp(vec![3], &[], 2).unwrap();
        for (_, p) in net.prunable_mut() {
            p.weight.data_mut().iter_mut().for_each(|w| *w = 0.25);
        }
        let l = PopupLearner::new(
            net.clone(),
            Sgd::new(0.0, 0.0).unwrap(),
            0.5,
            PruneScope::Global,
            true,
            1,
        )
        .unwrap();
        let (_, p) = l.network().prunable().next().unwrap();
        assert!(p.weight.data().iter().all(|&w| w == 0.25));
        assert_eq!(p.precision, Precision::Binary1 { alpha: 0.25 });
    }

    #[test]
    fn ep_requires_signed_constant_weights() {
        let net = Network::mlp(vec![3], &[], 2).unwrap();
        let r = PopupLearner::new(
            net,
            Sgd::new(0.0, 0.0).unwrap(),
            0.5,
            PruneScope::Global,
            false,
            1,
        );
        assert!(r.is_err());
    }
}
