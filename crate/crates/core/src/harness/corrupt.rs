//! Test-time corruption suite: five kinds at five severities each.
//!
//! | kind        | parameter                     | severity 1..5                 |
//! |-------------|-------------------------------|-------------------------------|
//! | gauss-noise | std as a fraction of range    | 0.05 0.08 0.12 0.16 0.20      |
//! | shot-noise  | photons per unit intensity    | 500 250 100 75 50             |
//! | box-blur    | kernel side                   | 2 3 3 4 5                     |
//! | contrast    | kept fraction of deviation    | 0.75 0.5 0.4 0.3 0.15         |
//! | pixelate    | block side                    | 1 2 2 4 4                     |

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Dataset;
use crate::rng;

pub const GAUSS_NOISE_STD: [f64; 5] = [0.05, 0.08, 0.12, 0.16, 0.20];
pub const SHOT_NOISE_RATE: [f64; 5] = [500.0, 250.0, 100.0, 75.0, 50.0];
pub const BOX_BLUR_KERNEL: [usize; 5] = [2, 3, 3, 4, 5];
pub const CONTRAST_SCALE: [f64; 5] = [0.75, 0.5, 0.4, 0.3, 0.15];
pub const PIXELATE_BLOCK: [usize; 5] = [1, 2, 2, 4, 4];

const CORRUPT_STREAM: u64 = 0x434f_5252;
const SUITE_STREAM: u64 = 0x5355_4954;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CorruptionKind {
    #[serde(rename = "gauss-noise")]
    GaussNoise,
    #[serde(rename = "shot-noise")]
    ShotNoise,
    #[serde(rename = "box-blur")]
    BoxBlur,
    #[serde(rename = "contrast")]
    Contrast,
    #[serde(rename = "pixelate")]
    Pixelate,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 5] = [
        CorruptionKind::GaussNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::Contrast,
        CorruptionKind::Pixelate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionKind::GaussNoise => "gauss-noise",
            CorruptionKind::ShotNoise => "shot-noise",
            CorruptionKind::BoxBlur => "box-blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Pixelate => "pixelate",
        }
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                what: "corruption",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::invalid(format!("severity {severity} outside 1..=5")));
        }
        Ok(Self { kind, severity })
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.kind.as_str(), self.severity)
    }

    fn level(&self) -> usize {
        self.severity as usize - 1
    }
}

pub fn corrupt(
    image: &[f32],
    dims: [usize; 3],
    range: (f32, f32),
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<Vec<f32>> {
    if !(1..=5).contains(&spec.severity) {
        return Err(Error::invalid(format!(
            "severity {} outside 1..=5",
            spec.severity
        )));
    }
    let (c, h, w) = (dims[0], dims[1], dims[2]);
    if image.len() != c * h * w {
        return Err(Error::shape("corrupted image", &dims, &[image.len()]));
    }
    let clamp = |v: f64| (v as f32).clamp(range.0, range.1);
    let span = (range.1 - range.0) as f64;
    let mut r = rng::stream(seed, &[CORRUPT_STREAM]);
    let out = match spec.kind {
        CorruptionKind::GaussNoise => {
            let n = Normal::new(0.0, GAUSS_NOISE_STD[spec.level()] * span).expect("std");
            image
                .iter()
                .map(|&v| clamp(v as f64 + n.sample(&mut r)))
                .collect()
        }
        CorruptionKind::ShotNoise => {
            let lam = SHOT_NOISE_RATE[spec.level()];
            image
                .iter()
                .map(|&v| {
                    let x = ((v - range.0) as f64 / span).max(0.0) * lam;
                    let k = if x > 0.0 {
                        Poisson::new(x).expect("positive rate").sample(&mut r)
                    } else {
                        0.0
                    };
                    clamp(range.0 as f64 + k / lam * span)
                })
                .collect()
        }
        CorruptionKind::BoxBlur => box_blur(image, dims, BOX_BLUR_KERNEL[spec.level()]),
        CorruptionKind::Contrast => {
            let s = CONTRAST_SCALE[spec.level()];
            let mut out = Vec::with_capacity(image.len());
            for p in image.chunks_exact(h * w) {
                let mean = p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64;
                out.extend(p.iter().map(|&v| clamp(mean + (v as f64 - mean) * s)));
            }
            out
        }
        CorruptionKind::Pixelate => pixelate(image, dims, PIXELATE_BLOCK[spec.level()]),
    };
    Ok(out)
}

/// Mean over a `k x k` window anchored so that `(k-1)/2` pixels lie before the
/// centre; edges use only the pixels inside the image.
pub fn box_blur(image: &[f32], dims: [usize; 3], k: usize) -> Vec<f32> {
    if k <= 1 {
        return image.to_vec();
    }
    let (h, w) = (dims[1], dims[2]);
    let before = (k - 1) / 2;
    let mut out = Vec::with_capacity(image.len());
    for p in image.chunks_exact(h * w) {
        for y in 0..h {
            let (y0, y1) = (y.saturating_sub(before), (y + k - before).min(h));
            for x in 0..w {
                let (x0, x1) = (x.saturating_sub(before), (x + k - before).min(w));
                let mut s = 0.0f64;
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        s += p[yy * w + xx] as f64;
                    }
                }
                out.push((s / ((y1 - y0) * (x1 - x0)) as f64) as f32);
            }
        }
    }
    out
}

/// Replace each `b x b` block by its mean (partial blocks at the far edges).
pub fn pixelate(image: &[f32], dims: [usize; 3], b: usize) -> Vec<f32> {
    if b <= 1 {
        return image.to_vec();
    }
    let (h, w) = (dims[1], dims[2]);
    let mut out = image.to_vec();
    for (p, o) in image.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for by in (0..h).step_by(b) {
            for bx in (0..w).step_by(b) {
                let (y1, x1) = ((by + b).min(h), (bx + b).min(w));
                let mut s = 0.0f64;
                for y in by..y1 {
                    for x in bx..x1 {
                        s += p[y * w + x] as f64;
                    }
                }
                let m = (s / ((y1 - by) * (x1 - bx)) as f64) as f32;
                for y in by..y1 {
                    for x in bx..x1 {
                        o[y * w + x] = m;
                    }
                }
            }
        }
    }
    out
}

/// Corrupt every image of a dataset; image `i` uses seed `derive(seed, [i])`.
pub fn corrupt_dataset(
    data: &Dataset,
    range: (f32, f32),
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<Dataset> {
    let dims: [usize; 3] = match *data.sample_shape() {
        [c, h, w] => [c, h, w],
        [h, w] => [1, h, w],
        _ => return Err(Error::invalid("corruptions apply to image datasets only")),
    };
    let mut err = None;
    let out = data.map_images(|i, img| {
        match corrupt(img, dims, range, spec, rng::derive(seed, &[i as u64])) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                img.to_vec()
            }
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Every corruption kind at the given severities.
pub fn suite(severities: &[u8]) -> Result<Vec<CorruptionSpec>> {
    let mut out = Vec::new();
    for kind in CorruptionKind::ALL {
        for &s in severities {
            out.push(CorruptionSpec::new(kind, s)?);
        }
    }
    Ok(out)
}

/// Corrupted copies of `data` for every suite entry, named `kind-severity`.
/// Each entry draws from its own stream of `seed`.
pub fn corrupted_suite(
    data: &Dataset,
    range: (f32, f32),
    severities: &[u8],
    seed: u64,
) -> Result<Vec<(String, Dataset)>> {
    let mut out = Vec::new();
    for spec in suite(severities)? {
        let s = rng::derive(seed, &[SUITE_STREAM, rng::tag(&spec.name())]);
        out.push((spec.name(), corrupt_dataset(data, range, &spec, s)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Vec<f32> {
        (0..2 * 8 * 8)
            .map(|k| ((k * 53) % 97) as f32 / 96.0)
            .collect()
    }

    #[test]
    fn degenerate_parameters_are_identity() {
        let img = image();
        assert_eq!(box_blur(&img, [2, 8, 8], 1), img);
        let s = CorruptionSpec::new(CorruptionKind::Pixelate, 1).unwrap();
        assert_eq!(corrupt(&img, [2, 8, 8], (0.0, 1.0), &s, 0).unwrap(), img);
    }

    #[test]
    fn severity_bounds() {
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Contrast, 6).is_err());
        assert!("fog".parse::<CorruptionKind>().is_err());
    }

    #[test]
    fn contrast_energy_grows() {
        let img = image();
        let mse = |s| {
            let spec = CorruptionSpec::new(CorruptionKind::Contrast, s).unwrap();
            let out = corrupt(&img, [2, 8, 8], (0.0, 1.0), &spec, 3).unwrap();
            out.iter()
                .zip(&img)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
        };
        for s in 1..5 {
            assert!(mse(s + 1) >= mse(s));
        }
    }
}
