use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::Mask;
use crate::nn::network::{Network, ParamGrad};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- momentum * v + (g + weight_decay * w)`, `w <- w - lr * v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    /// Velocity buffers keyed by parameter slot.
    velocity: Vec<Option<Vec<f32>>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum {momentum} outside [0, 1)"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay {weight_decay} is negative"
            )));
        }
        Ok(Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn momentum(&self) -> f32 {
        self.momentum
    }

    pub fn weight_decay(&self) -> f32 {
        self.weight_decay
    }

    pub fn velocity(&self, slot: usize) -> Option<&[f32]> {
        self.velocity.get(slot).and_then(|v| v.as_deref())
    }

    /// Update one parameter buffer in place. Positions removed by `frozen` are
    /// left untouched, velocity included.
    pub fn step_slot(
        &mut self,
        slot: usize,
        params: &mut [f32],
        grad: &[f32],
        lr: f32,
        frozen: Option<&Mask>,
    ) {
        debug_assert_eq!(params.len(), grad.len());
        if self.velocity.len() <= slot {
            self.velocity.resize(slot + 1, None);
        }
        let v = self.velocity[slot].get_or_insert_with(|| vec![0.0; params.len()]);
        let (mu, wd) = (self.momentum, self.weight_decay);
        for i in 0..params.len() {
            if frozen.is_some_and(|m| !m.is_kept(i)) {
                continue;
            }
            let g = grad[i] + wd * params[i];
            v[i] = mu * v[i] + g;
            params[i] -= lr * v[i];
        }
    }

    /// Apply gradients to every parametric layer's weights (and biases when
    /// `train_bias`). Masked weights are frozen.
    pub fn step_network(
        &mut self,
        net: &mut Network,
        grads: &[Option<ParamGrad>],
        lr: f32,
        train_bias: bool,
    ) {
        for (idx, p) in net.prunable_mut() {
            let Some(g) = grads[idx].as_ref() else {
                continue;
            };
            let mask = p.mask.clone();
            self.step_slot(2 * idx, p.weight.data_mut(), &g.weight, lr, mask.as_ref());
            if train_bias {
                if let (Some(b), Some(gb)) = (p.bias.as_mut(), g.bias.as_ref()) {
                    self.step_slot(2 * idx + 1, b.data_mut(), gb, lr, None);
                }
            }
        }
    }

    /// Forget momentum at positions a mask has removed.
    pub fn zero_masked(&mut self, net: &Network) {
        for (idx, p) in net.prunable() {
            let (Some(m), Some(Some(v))) = (p.mask.as_ref(), self.velocity.get_mut(2 * idx)) else {
                continue;
            };
            for (vi, &k) in v.iter_mut().zip(m.keep()) {
                if !k {
                    *vi = 0.0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step_is_exact() {
        let mut opt = Sgd::new(0.0, 0.0).unwrap();
        let mut w = vec![0.3f32, -1.7, 2.5];
        let g = vec![0.11f32, -0.02, 4.0];
        let eta = 0.05f32;
        let expect: Vec<f32> = w.iter().zip(&g).map(|(w, g)| w - eta * g).collect();
        opt.step_slot(0, &mut w, &g, eta, None);
        assert_eq!(w, expect);
    }

    #[test]
    fn frozen_positions_do_not_move() {
        let mut opt = Sgd::new(0.9, 1e-4).unwrap();
        let mut w = vec![1.0f32, 2.0];
        let mask = Mask::from_keep(vec![false, true]);
        for _ in 0..5 {
            opt.step_slot(0, &mut w, &[1.0, 1.0], 0.1, Some(&mask));
        }
        assert_eq!(w[0], 1.0);
        assert!(w[1] < 2.0);
        assert_eq!(opt.velocity(0).unwrap()[0], 0.0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(1.0, 0.0).is_err());
        assert!(Sgd::new(0.5, -1.0).is_err());
    }
}
