//! Training-time augmentations. None of these operations (or their parameter
//! values) overlap with the test-time corruptions in `corrupt`.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SampleTransform;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationSpec {
    Clean,
    /// With probability `p`, add i.i.d. `N(0, (sigma * range)^2)` per pixel.
    Gaussian {
        sigma: f64,
        p: f64,
    },
    /// `width` chains of 1 to `max_depth` random operations, mixed with
    /// Dirichlet(1) weights and blended with the original at a Beta(1, 1) weight.
    /// Each operation's strength is drawn from `U(0.1, severity) / 10` of its maximum.
    Mix {
        width: usize,
        max_depth: usize,
        severity: f64,
    },
}

impl AugmentationSpec {
    pub fn gaussian() -> Self {
        AugmentationSpec::Gaussian { sigma: 0.1, p: 0.5 }
    }

    pub fn mix() -> Self {
        AugmentationSpec::Mix {
            width: 3,
            max_depth: 3,
            severity: 3.0,
        }
    }

    /// Short id used for indexes, cards and reports.
    pub fn id(&self) -> &'static str {
        match self {
            AugmentationSpec::Clean => "clean",
            AugmentationSpec::Gaussian { .. } => "gaussian",
            AugmentationSpec::Mix { .. } => "mix",
        }
    }

    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "clean" => Ok(AugmentationSpec::Clean),
            "gaussian" => Ok(AugmentationSpec::gaussian()),
            "mix" => Ok(AugmentationSpec::mix()),
            _ => Err(Error::Unknown {
                what: "augmentation",
                name: id.to_string(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentationSpec::Clean => Ok(()),
            AugmentationSpec::Gaussian { sigma, p } => {
                if !(sigma > 0.0) || !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!(
                        "gaussian augmentation sigma={sigma} p={p}"
                    )));
                }
                Ok(())
            }
            AugmentationSpec::Mix {
                width,
                max_depth,
                severity,
            } => {
                if width == 0 || max_depth == 0 {
                    return Err(Error::invalid(
                        "mix augmentation needs positive width and depth",
                    ));
                }
                if !(severity > 0.1 && severity <= 10.0) {
                    return Err(Error::invalid(format!(
                        "mix severity {severity} outside (0.1, 10]"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// An augmentation bound to an image shape and value range.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmenter {
    pub spec: AugmentationSpec,
    /// `(channels, height, width)`.
    pub dims: [usize; 3],
    pub range: (f32, f32),
}

impl Augmenter {
    pub fn new(spec: AugmentationSpec, dims: [usize; 3], range: (f32, f32)) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, dims, range })
    }
}

impl SampleTransform for Augmenter {
    fn apply(&self, image: &[f32], seed: u64) -> Vec<f32> {
        augment(image, self.dims, self.range, &self.spec, seed)
    }
}

pub fn augment(
    image: &[f32],
    dims: [usize; 3],
    range: (f32, f32),
    spec: &AugmentationSpec,
    seed: u64,
) -> Vec<f32> {
    let mut r = rng::stream(seed, &[]);
    match *spec {
        AugmentationSpec::Clean => image.to_vec(),
        AugmentationSpec::Gaussian { sigma, p } => {
            if !r.random_bool(p) {
                return image.to_vec();
            }
            let span = (range.1 - range.0) as f64;
            let n = Normal::new(0.0, sigma * span).expect("positive sigma");
            image
                .iter()
                .map(|&v| ((v as f64 + n.sample(&mut r)) as f32).clamp(range.0, range.1))
                .collect()
        }
        AugmentationSpec::Mix {
            width,
            max_depth,
            severity,
        } => mix(image, dims, range, width, max_depth, severity, &mut r),
    }
}

fn mix(
    image: &[f32],
    dims: [usize; 3],
    range: (f32, f32),
    width: usize,
    max_depth: usize,
    severity: f64,
    r: &mut Rng,
) -> Vec<f32> {
    // Dirichlet(1, ..., 1) as normalized unit exponentials.
    let mut weights: Vec<f64> = (0..width).map(|_| Exp1.sample(r)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let m: f64 = Beta::new(1.0, 1.0).expect("beta").sample(r);
    let mut acc = vec![0.0f64; image.len()];
    for &w in &weights {
        let depth = r.random_range(1..=max_depth);
        let mut x = image.to_vec();
        for _ in 0..depth {
            let op = OPS[r.random_range(0..OPS.len())];
            let level = r.random_range(0.1..=severity) / 10.0;
            x = op(&x, dims, range, level, r);
        }
        for (a, &v) in acc.iter_mut().zip(&x) {
            *a += w * v as f64;
        }
    }
    image
        .iter()
        .zip(&acc)
        .map(|(&o, &a)| ((m * o as f64 + (1.0 - m) * a) as f32).clamp(range.0, range.1))
        .collect()
}

type Op = fn(&[f32], [usize; 3], (f32, f32), f64, &mut Rng) -> Vec<f32>;

const OPS: [Op; 7] = [
    autocontrast,
    equalize,
    posterize,
    rotate,
    solarize,
    shear,
    translate,
];

fn planes(x: &[f32], dims: [usize; 3]) -> std::slice::ChunksExact<'_, f32> {
    x.chunks_exact(dims[1] * dims[2])
}

fn autocontrast(x: &[f32], dims: [usize; 3], range: (f32, f32), _: f64, _: &mut Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    for p in planes(x, dims) {
        let lo = p.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi - lo <= f32::EPSILON {
            out.extend_from_slice(p);
            continue;
        }
        let s = (range.1 - range.0) / (hi - lo);
        out.extend(p.iter().map(|&v| range.0 + (v - lo) * s));
    }
    out
}

fn equalize(x: &[f32], dims: [usize; 3], range: (f32, f32), _: f64, _: &mut Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    let span = range.1 - range.0;
    for p in planes(x, dims) {
        // Rank-based equalization: each pixel maps to its empirical CDF.
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
        let mut eq = vec![0f32; p.len()];
        let n = (p.len() - 1).max(1) as f32;
        let mut k = 0;
        while k < order.len() {
            let mut end = k;
            while end + 1 < order.len() && p[order[end + 1]] == p[order[k]] {
                end += 1;
            }
            let v = range.0 + span * end as f32 / n;
            for &i in &order[k..=end] {
                eq[i] = v;
            }
            k = end + 1;
        }
        out.extend(eq);
    }
    out
}

fn posterize(x: &[f32], _: [usize; 3], range: (f32, f32), level: f64, _: &mut Rng) -> Vec<f32> {
    let bits = 4 - (level * 4.0).floor().min(3.0) as i32;
    let steps = ((1 << bits) - 1) as f32;
    let span = range.1 - range.0;
    x.iter()
        .map(|&v| range.0 + (((v - range.0) / span) * steps).round() / steps * span)
        .collect()
}

fn solarize(x: &[f32], _: [usize; 3], range: (f32, f32), level: f64, _: &mut Rng) -> Vec<f32> {
    let t = range.1 - (level as f32) * (range.1 - range.0);
    x.iter()
        .map(|&v| if v >= t { range.1 + range.0 - v } else { v })
        .collect()
}

/// Resample every plane through `src(y, x) -> (sy, sx)` with bilinear
/// interpolation, filling outside samples with the plane mean.
fn warp(x: &[f32], dims: [usize; 3], src: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f32> {
    let (h, w) = (dims[1], dims[2]);
    let mut out = Vec::with_capacity(x.len());
    for p in planes(x, dims) {
        let fill = p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64;
        let at = |yy: i64, xx: i64| {
            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                fill
            } else {
                p[yy as usize * w + xx as usize] as f64
            }
        };
        for y in 0..h {
            for xx in 0..w {
                let (sy, sx) = src(y as f64, xx as f64);
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as i64, x0 as i64);
                let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x0 + 1) * (1.0 - fy) * fx
                    + at(y0 + 1, x0) * fy * (1.0 - fx)
                    + at(y0 + 1, x0 + 1) * fy * fx;
                out.push(v as f32);
            }
        }
    }
    out
}

fn random_sign(r: &mut Rng) -> f64 {
    if r.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn rotate(x: &[f32], dims: [usize; 3], _: (f32, f32), level: f64, r: &mut Rng) -> Vec<f32> {
    let a = random_sign(r) * level * 30f64.to_radians();
    let (cy, cx) = ((dims[1] as f64 - 1.0) / 2.0, (dims[2] as f64 - 1.0) / 2.0);
    let (c, s) = (a.cos(), a.sin());
    warp(x, dims, |y, xx| {
        let (dy, dx) = (y - cy, xx - cx);
        (cy + c * dy - s * dx, cx + s * dy + c * dx)
    })
}

fn shear(x: &[f32], dims: [usize; 3], _: (f32, f32), level: f64, r: &mut Rng) -> Vec<f32> {
    let k = random_sign(r) * level * 0.3;
    let cy = (dims[1] as f64 - 1.0) / 2.0;
    let cx = (dims[2] as f64 - 1.0) / 2.0;
    if r.random_bool(0.5) {
        warp(x, dims, |y, xx| (y, xx + k * (y - cy)))
    } else {
        warp(x, dims, |y, xx| (y + k * (xx - cx), xx))
    }
}

fn translate(x: &[f32], dims: [usize; 3], _: (f32, f32), level: f64, r: &mut Rng) -> Vec<f32> {
    let t = random_sign(r) * (level * dims[1].min(dims[2]) as f64 / 3.0).round();
    if r.random_bool(0.5) {
        warp(x, dims, |y, xx| (y + t, xx))
    } else {
        warp(x, dims, |y, xx| (y, xx + t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Vec<f32> {
        (0..3 * 8 * 8)
            .map(|k| ((k * 37) % 101) as f32 / 100.0)
            .collect()
    }

    #[test]
    fn identities() {
        let img = image();
        let d = [3, 8, 8];
        assert_eq!(
            augment(&img, d, (0.0, 1.0), &AugmentationSpec::Clean, 4),
            img
        );
        let g = AugmentationSpec::Gaussian { sigma: 0.1, p: 0.0 };
        assert_eq!(augment(&img, d, (0.0, 1.0), &g, 4), img);
    }

    #[test]
    fn mix_stays_in_range_and_is_seeded() {
        let img = image();
        let d = [3, 8, 8];
        let spec = AugmentationSpec::mix();
        for s in 0..20 {
            let a = augment(&img, d, (0.0, 1.0), &spec, s);
            assert_eq!(a, augment(&img, d, (0.0, 1.0), &spec, s));
            assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_ne!(
            augment(&img, d, (0.0, 1.0), &spec, 1),
            augment(&img, d, (0.0, 1.0), &spec, 2)
        );
    }

    #[test]
    fn ops_preserve_size() {
        let img = image();
        let mut r = rng::stream(1, &[]);
        for op in OPS {
            assert_eq!(
                op(&img, [3, 8, 8], (0.0, 1.0), 0.7, &mut r).len(),
                img.len()
            );
        }
    }
}
