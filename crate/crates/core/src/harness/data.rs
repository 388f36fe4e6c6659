//! Synthetic image data and its on-disk form.
//!
//! Images are flat little-endian `f32` in `(n, c, h, w)` order and labels flat
//! little-endian `u32`; a JSON manifest points at both.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::nn::Dataset;
use crate::rng;
use crate::tensor::Tensor;

const IMAGE_STREAM: u64 = 0x494d_4147;
const SPLIT_STREAM: u64 = 0x5350_4c54;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub classes: usize,
    /// Total images, split into train and test.
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            classes: 10,
            count: 2000,
            channels: 3,
            height: 16,
            width: 16,
            test_fraction: 0.25,
        }
    }
}

impl SyntheticSpec {
    /// Pixel values lie in `[-1, 1]`.
    pub fn value_range(&self) -> (f32, f32) {
        (-1.0, 1.0)
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Per-class appearance: grating orientation and frequency and a colour tilt.
/// Orientations are spread over five directions and frequencies over two
/// bands, so mild rotations and shifts keep an image in its class.
struct ClassStyle {
    theta: f64,
    freq: f64,
    tint: Vec<f64>,
}

fn class_style(k: usize, classes: usize, spec: &SyntheticSpec) -> ClassStyle {
    let dirs = classes.min(5);
    let theta = PI * (k % dirs) as f64 / dirs as f64;
    let freq = 2.0 + 2.0 * ((k / dirs) % 2) as f64;
    let tint = (0..spec.channels)
        .map(|c| 0.1 * (TAU * (k + c) as f64 / classes.max(2) as f64).cos())
        .collect();
    ClassStyle { theta, freq, tint }
}

fn render(style: &ClassStyle, spec: &SyntheticSpec, r: &mut crate::rng::Rng) -> Vec<f32> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let phase = r.random_range(0.0..TAU);
    let amp = r.random_range(0.1..0.3);
    let theta = style.theta + r.random_range(-0.15..0.15);
    let centre = (
        r.random_range(0.25..0.75) * h,
        r.random_range(0.25..0.75) * w,
    );
    let half = (h.min(w) / 10.0).max(1.0);
    let shade = r.random_range(0.1..0.5);
    let noise = Normal::new(0.0, 0.12).expect("std");
    let (ct, st) = (theta.cos(), theta.sin());
    let mut out = Vec::with_capacity(spec.channels * spec.height * spec.width);
    for c in 0..spec.channels {
        for y in 0..spec.height {
            for x in 0..spec.width {
                let (u, v) = (y as f64 / h, x as f64 / w);
                let g = (TAU * style.freq * (u * ct + v * st) + phase).sin();
                let mut val = amp * g + style.tint[c];
                let dy = (y as f64 + 0.5 - centre.0).abs();
                let dx = (x as f64 + 0.5 - centre.1).abs();
                if dy <= half && dx <= half {
                    val += shade;
                }
                val += noise.sample(r);
                out.push(val.clamp(-1.0, 1.0) as f32);
            }
        }
    }
    out
}

/// Deterministic class-balanced images in `[-1, 1]`, split into a train and a
/// test set with the same class balance. Both sets are shuffled.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 || spec.count == 0 || !spec.count.is_multiple_of(spec.classes) {
        return Err(Error::invalid(format!(
            "{} images cannot be split evenly across {} classes",
            spec.count, spec.classes
        )));
    }
    if spec.height < 2 || spec.width < 2 || spec.channels == 0 {
        return Err(Error::invalid(
            "images must be at least 2x2 with one channel",
        ));
    }
    if !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(Error::invalid("test fraction outside [0, 1)"));
    }
    let per_class = spec.count / spec.classes;
    let test_per_class = (per_class as f64 * spec.test_fraction).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..spec.classes {
        let style = class_style(k, spec.classes, spec);
        let mut order: Vec<usize> = (0..per_class).collect();
        order.shuffle(&mut rng::stream(spec.seed, &[SPLIT_STREAM, k as u64]));
        let mut imgs: Vec<Vec<f32>> = (0..per_class)
            .map(|i| {
                render(
                    &style,
                    spec,
                    &mut rng::stream(spec.seed, &[IMAGE_STREAM, k as u64, i as u64]),
                )
            })
            .collect();
        for (pos, &i) in order.iter().enumerate() {
            let img = std::mem::take(&mut imgs[i]);
            if pos < test_per_class {
                test.push((img, k));
            } else {
                train.push((img, k));
            }
        }
    }
    let finish = |mut items: Vec<(Vec<f32>, usize)>, tag: u64| -> Result<Dataset> {
        items.shuffle(&mut rng::stream(spec.seed, &[SPLIT_STREAM, u64::MAX, tag]));
        let rows: Vec<&[f32]> = items.iter().map(|(v, _)| v.as_slice()).collect();
        let images = Tensor::stack(&spec.sample_shape(), &rows)?;
        Dataset::new(images, items.iter().map(|x| x.1).collect(), spec.classes)
    };
    Ok((finish(train, 0)?, finish(test, 1)?))
}

/// Describes a dataset stored as raw image and label files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// `(channels, height, width)`.
    pub dims: [usize; 3],
    pub count: usize,
    pub num_classes: usize,
    pub value_range: (f32, f32),
    pub seed: u64,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(
            &std::fs::read_to_string(path).at(path)?,
        )?)
    }

    /// SHA-256 of the manifest file's bytes.
    pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).at(path)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Read the data the manifest points at; relative paths resolve against `base`.
    pub fn read(&self, base: impl AsRef<Path>) -> Result<Dataset> {
        let base = base.as_ref();
        let ipath = base.join(&self.images);
        let lpath = base.join(&self.labels);
        let ibytes = std::fs::read(&ipath).at(&ipath)?;
        let per = self.dims.iter().product::<usize>();
        if ibytes.len() != self.count * per * 4 {
            return Err(Error::format(
                "image file",
                format!("{} bytes, expected {}", ibytes.len(), self.count * per * 4),
            ));
        }
        let lbytes = std::fs::read(&lpath).at(&lpath)?;
        if lbytes.len() != self.count * 4 {
            return Err(Error::format(
                "label file",
                format!("{} bytes for {} labels", lbytes.len(), self.count),
            ));
        }
        let data = ibytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let labels = lbytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let mut shape = vec![self.count];
        shape.extend_from_slice(&self.dims);
        Dataset::new(Tensor::new(shape, data)?, labels, self.num_classes)
    }
}

/// Write `data` as `<stem>.images.f32`, `<stem>.labels.u32` and `<stem>.json`
/// inside `dir`. Returns the manifest path.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    stem: &str,
    data: &Dataset,
    value_range: (f32, f32),
    seed: u64,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).at(dir)?;
    let dims: [usize; 3] = match *data.sample_shape() {
        [c, h, w] => [c, h, w],
        [h, w] => [1, h, w],
        _ => return Err(Error::invalid("only image datasets can be written")),
    };
    let images = PathBuf::from(format!("{stem}.images.f32"));
    let labels = PathBuf::from(format!("{stem}.labels.u32"));
    let ibytes: Vec<u8> = data
        .images()
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    std::fs::write(dir.join(&images), ibytes).at(dir.join(&images))?;
    let lbytes: Vec<u8> = data
        .labels()
        .iter()
        .flat_map(|&l| (l as u32).to_le_bytes())
        .collect();
    std::fs::write(dir.join(&labels), lbytes).at(dir.join(&labels))?;
    let m = DatasetManifest {
        images,
        labels,
        dims,
        count: data.len(),
        num_classes: data.num_classes(),
        value_range,
        seed,
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").at(&path)?;
    Ok(path)
}

/// Load a dataset from its manifest path.
pub fn read_dataset(manifest: impl AsRef<Path>) -> Result<(Dataset, DatasetManifest)> {
    let path = manifest.as_ref();
    let m = DatasetManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok((m.read(base)?, m))
}

const TENSOR_MAGIC: &[u8; 4] = b"CDTN";

/// Standalone tensor file: magic, `u32` rank, `u32` dims, `f32` data.
pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut out = TENSOR_MAGIC.to_vec();
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).at(path)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).at(path)?;
    let bad = |r: &str| Error::format("tensor file", r.to_string());
    if bytes.len() < 8 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |o: usize| -> Result<usize> {
        bytes
            .get(o..o + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| bad("truncated header"))
    };
    let rank = u32_at(4)?;
    let shape = (0..rank)
        .map(|k| u32_at(8 + 4 * k))
        .collect::<Result<Vec<_>>>()?;
    let body = &bytes[8 + 4 * rank..];
    let n: usize = shape.iter().product();
    if body.len() != n * 4 {
        return Err(bad("data length does not match shape"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let spec = SyntheticSpec {
            count: 120,
            classes: 3,
            height: 8,
            width: 8,
            ..Default::default()
        };
        let (tr, te) = generate_dataset(&spec).unwrap();
        assert_eq!(tr.len() + te.len(), 120);
        for k in 0..3 {
            assert_eq!(te.labels().iter().filter(|&&l| l == k).count(), 10);
        }
        let (tr2, _) = generate_dataset(&spec).unwrap();
        assert_eq!(tr.images().data(), tr2.images().data());
        assert!(tr.images().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn uneven_count_rejected() {
        let spec = SyntheticSpec {
            count: 10,
            classes: 3,
            ..Default::default()
        };
        assert!(generate_dataset(&spec).is_err());
    }

    #[test]
    fn files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            count: 40,
            classes: 2,
            height: 4,
            width: 4,
            ..Default::default()
        };
        let (tr, _) = generate_dataset(&spec).unwrap();
        let path = write_dataset(dir.path(), "train", &tr, (0.0, 1.0), 0).unwrap();
        let (back, m) = read_dataset(&path).unwrap();
        assert_eq!(back, tr);
        assert_eq!(m.dims, [3, 4, 4]);
        let tp = dir.path().join("t.bin");
        write_tensor(&tp, tr.images()).unwrap();
        assert_eq!(&read_tensor(&tp).unwrap(), tr.images());
    }
}
