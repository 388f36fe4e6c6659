use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Storage precision of a parametric layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Precision {
    Full32,
    /// Every weight is `-alpha` or `+alpha` (stored rounded to `f32`).
    Binary1 {
        alpha: f64,
    },
}

impl Precision {
    pub fn bits_per_weight(&self) -> u64 {
        match self {
            Precision::Full32 => 32,
            Precision::Binary1 { .. } => 1,
        }
    }
}

/// Binary keep-mask over a weight tensor; `true` means the weight survives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn ones(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn from_keep(keep: Vec<bool>) -> Self {
        Self(keep)
    }

    pub fn keep(&self) -> &[bool] {
        &self.0
    }

    pub fn keep_mut(&mut self) -> &mut [bool] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.0.iter().filter(|&&k| k).count()
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.0[i]
    }
}

/// Weights and the compression state attached to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub mask: Option<Mask>,
    pub scores: Option<Tensor>,
    pub precision: Precision,
}

impl Params {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self {
            weight,
            bias,
            mask: None,
            scores: None,
            precision: Precision::Full32,
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    /// Number of weights not removed by the mask.
    pub fn surviving(&self) -> usize {
        self.mask.as_ref().map_or(self.weight.len(), Mask::kept)
    }

    /// Weights as seen by the forward pass: `weight ⊙ mask`.
    pub fn effective_weight(&self) -> Cow<'_, [f32]> {
        match &self.mask {
            None => Cow::Borrowed(self.weight.data()),
            Some(m) => Cow::Owned(
                self.weight
                    .data()
                    .iter()
                    .zip(m.keep())
                    .map(|(&w, &k)| if k { w } else { 0.0 })
                    .collect(),
            ),
        }
    }

    pub fn set_mask(&mut self, mask: Mask) -> Result<()> {
        if mask.len() != self.weight.len() {
            return Err(Error::shape("mask", self.weight.shape(), &[mask.len()]));
        }
        self.mask = Some(mask);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weight.len();
        if let Some(m) = &self.mask {
            if m.len() != n {
                return Err(Error::shape("mask", self.weight.shape(), &[m.len()]));
            }
        }
        if let Some(s) = &self.scores {
            if s.shape() != self.weight.shape() {
                return Err(Error::shape("scores", self.weight.shape(), s.shape()));
            }
        }
        if let Precision::Binary1 { alpha } = self.precision {
            if !(alpha > 0.0) {
                return Err(Error::invalid(format!(
                    "binary gain {alpha} must be positive"
                )));
            }
            let bad = self
                .weight
                .data()
                .iter()
                .any(|&w| w != alpha as f32 && w != -(alpha as f32));
            if bad {
                return Err(Error::invalid(
                    "binary layer holds values other than ±alpha",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Weight shape `(out, in)`. Inputs are flattened per sample.
    Dense(Params),
    /// Weight shape `(out_channels, in_channels, k, k)`.
    Conv2d {
        params: Params,
        stride: usize,
        padding: usize,
    },
    Relu,
    GlobalAvgPool,
    /// Marks the preceding output as logits of a softmax classifier.
    SoftmaxOutput,
}

impl Layer {
    pub fn params(&self) -> Option<&Params> {
        match self {
            Layer::Dense(p) | Layer::Conv2d { params: p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut Params> {
        match self {
            Layer::Dense(p) | Layer::Conv2d { params: p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::GlobalAvgPool => "global-avg-pool",
            Layer::SoftmaxOutput => "softmax-output",
        }
    }

    /// Fan-in of a parametric layer.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Dense(p) => Some(p.weight.shape()[1]),
            Layer::Conv2d { params, .. } => Some(params.weight.shape()[1..].iter().product()),
            _ => None,
        }
    }
}
