//! Weight initializers. Each parametric layer draws from its own stream keyed by
//! `(seed, layer index)`; biases start at zero.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::nn::layer::Precision;
use crate::nn::network::Network;
use crate::rng;
use crate::tensor::Tensor;

const WEIGHT_STREAM: u64 = 0x5745_4947;
const SCORE_STREAM: u64 = 0x5343_4f52;

fn kaiming_std(fan_in: usize, density: f64) -> f64 {
    (2.0 / (fan_in as f64 * density)).sqrt()
}

fn reset_bias(p: &mut crate::nn::Params) {
    if let Some(b) = p.bias.as_mut() {
        b.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Fan-in scaled normal weights: `N(0, 2 / fan_in)`.
pub fn kaiming_normal(net: &mut Network, seed: u64) {
    kaiming_normal_scaled(net, seed, 1.0);
}

/// `N(0, 2 / (fan_in * density))`: the fan-in counts only the fraction of
/// weights expected to survive pruning.
pub fn kaiming_normal_scaled(net: &mut Network, seed: u64, density: f64) {
    let fans: Vec<usize> = net.layers().iter().filter_map(|l| l.fan_in()).collect();
    for ((idx, p), fan_in) in net.prunable_mut().zip(fans) {
        let mut r = rng::stream(seed, &[WEIGHT_STREAM, idx as u64]);
        let normal = Normal::new(0.0, kaiming_std(fan_in, density)).expect("positive std");
        p.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = normal.sample(&mut r) as f32);
        reset_bias(p);
        p.precision = Precision::Full32;
    }
}

/// Signed constant weights: `sign(N(0,1)) * sqrt(2 / (fan_in * density))`.
/// The layer is tagged binary with that constant as its gain.
pub fn signed_constant(net: &mut Network, seed: u64, density: f64) {
    let fans: Vec<usize> = net.layers().iter().filter_map(|l| l.fan_in()).collect();
    for ((idx, p), fan_in) in net.prunable_mut().zip(fans) {
        let mut r = rng::stream(seed, &[WEIGHT_STREAM, idx as u64]);
        let alpha = kaiming_std(fan_in, density);
        let a = alpha as f32;
        p.weight.data_mut().iter_mut().for_each(|w| {
            let z: f64 = r.sample(rand_distr::StandardNormal);
            *w = if z < 0.0 { -a } else { a };
        });
        reset_bias(p);
        p.precision = Precision::Binary1 { alpha };
    }
}

/// Popup scores drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_scores(net: &mut Network, seed: u64) {
    let fans: Vec<usize> = net.layers().iter().filter_map(|l| l.fan_in()).collect();
    for ((idx, p), fan_in) in net.prunable_mut().zip(fans) {
        let mut r = rng::stream(seed, &[SCORE_STREAM, idx as u64]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let u = Uniform::new(-bound, bound).expect("valid bounds");
        let data = (0..p.len()).map(|_| u.sample(&mut r) as f32).collect();
        p.scores = Some(Tensor::new(p.weight.shape().to_vec(), data).expect("score shape"));
    }
}
