use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::nn::init::{kaiming_normal, kaiming_normal_scaled, signed_constant};
use crate::nn::Network;
use crate::prune::config::{Method, PruneOutcome, TrainInput, TrainSpec};
use crate::prune::ft::{run_dense, run_ft, FtConfig};
use crate::prune::gmp::{run_gmp, GmpConfig, GmpSchedule};
use crate::prune::mask::PruneScope;
use crate::prune::popup::{run_bp, run_ep, PopupConfig};
use crate::prune::rewind::{run_rewinding, RewindConfig, RewindMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewindParams {
    pub rewind_iter: Option<usize>,
    #[serde(default = "default_rate")]
    pub per_shot_rate: f64,
    pub shots: Option<usize>,
}

fn default_rate() -> f64 {
    0.2
}

impl Default for RewindParams {
    fn default() -> Self {
        Self {
            rewind_iter: None,
            per_shot_rate: default_rate(),
            shots: None,
        }
    }
}

/// One compression run, as read from a TOML file:
///
/// ```toml
/// method = "lrr"
/// scope = "global"
/// target = 0.9
/// seed = 7
///
/// [train]
/// epochs = 8
///
/// [rewind]
/// per_shot_rate = 0.2
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneManifest {
    pub method: Method,
    #[serde(default = "default_scope")]
    pub scope: PruneScope,
    #[serde(default)]
    pub target: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainSpec,
    pub finetune_epochs: Option<usize>,
    pub gmp: Option<GmpSchedule>,
    #[serde(default)]
    pub rewind: RewindParams,
}

fn default_scope() -> PruneScope {
    PruneScope::Global
}

impl PruneManifest {
    pub fn new(
        method: Method,
        scope: PruneScope,
        target: f64,
        train: TrainSpec,
        seed: u64,
    ) -> Self {
        Self {
            method,
            scope,
            target,
            seed,
            train,
            finetune_epochs: None,
            gmp: None,
            rewind: RewindParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn rewind_config(&self) -> Result<RewindConfig> {
        let mode = match self.method {
            Method::Lth => RewindMode::WeightsAndLr,
            Method::Lrr => RewindMode::LrOnly,
            m => return Err(Error::invalid(format!("{m} is not a rewinding method"))),
        };
        Ok(RewindConfig {
            train: self.train.clone(),
            rewind_iter: self.rewind.rewind_iter,
            per_shot_rate: self.rewind.per_shot_rate,
            target_sparsity: self.target,
            mode,
            shots: self.rewind.shots,
            scope: self.scope,
            seed: self.seed,
        })
    }

    /// Initialize `net` for the method and run it.
    pub fn run<'a>(
        &self,
        mut net: Network,
        input: impl Into<TrainInput<'a>>,
    ) -> Result<PruneOutcome> {
        initialize(self.method, &mut net, self.seed, self.target)?;
        let input = input.into();
        match self.method {
            Method::Dense => run_dense(net, input, &self.train, self.seed),
            Method::Ft => run_ft(
                net,
                input,
                &FtConfig {
                    train: self.train.clone(),
                    target: self.target,
                    scope: self.scope,
                    finetune_epochs: self.finetune_epochs,
                    seed: self.seed,
                },
            ),
            Method::Gmp => run_gmp(
                net,
                input,
                &GmpConfig {
                    train: self.train.clone(),
                    target: self.target,
                    scope: self.scope,
                    schedule: self.gmp,
                    seed: self.seed,
                },
            ),
            Method::Lth | Method::Lrr => run_rewinding(net, input, &self.rewind_config()?),
            Method::Ep | Method::Bp => {
                let cfg = PopupConfig {
                    train: self.train.clone(),
                    sparsity: self.target,
                    scope: self.scope,
                    seed: self.seed,
                };
                if self.method == Method::Ep {
                    run_ep(net, input, &cfg)
                } else {
                    run_bp(net, input, &cfg)
                }
            }
        }
    }
}

/// Signed-constant weights for edge-popup, fan-in scaled normal otherwise.
/// Popup methods scale the fan-in by the fraction of weights they will keep.
pub fn initialize(method: Method, net: &mut Network, seed: u64, sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Sparsity(sparsity));
    }
    match method {
        Method::Ep => signed_constant(net, seed, 1.0 - sparsity),
        Method::Bp => kaiming_normal_scaled(net, seed, 1.0 - sparsity),
        _ => kaiming_normal(net, seed),
    }
    Ok(())
}

/// One line of a compression report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub scope: PruneScope,
    pub nominal_sparsity: f64,
    pub achieved_sparsity: f64,
    pub clean_acc: f64,
    pub corrupted_acc: f64,
    pub memory_bits: u64,
}
