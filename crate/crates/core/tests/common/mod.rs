#![allow(dead_code)]

use carddeck::harness::{generate_dataset, SyntheticSpec};
use carddeck::nn::init::kaiming_normal;
use carddeck::nn::{Dataset, Layer, Network, Params};
use carddeck::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn tensor(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform_vec(r, n, -1.0, 1.0)).unwrap()
}

/// Small synthetic split, `count` images of `side x side` with 3 channels.
pub fn toy_data(count: usize, classes: usize, side: usize, seed: u64) -> (Dataset, Dataset) {
    generate_dataset(&SyntheticSpec {
        seed,
        classes,
        count,
        height: side,
        width: side,
        ..Default::default()
    })
    .unwrap()
}

pub fn mlp(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Network {
    let mut net = Network::mlp(vec![input], hidden, classes).unwrap();
    kaiming_normal(&mut net, seed);
    net
}

pub fn toy_mlp(data: &Dataset, hidden: &[usize], seed: u64) -> Network {
    let mut net = Network::mlp(data.sample_shape().to_vec(), hidden, data.num_classes()).unwrap();
    kaiming_normal(&mut net, seed);
    net
}

pub fn conv(
    i: usize,
    o: usize,
    k: usize,
    stride: usize,
    padding: usize,
    r: &mut ChaCha8Rng,
) -> Layer {
    let w = Tensor::new(vec![o, i, k, k], uniform_vec(r, o * i * k * k, -0.5, 0.5)).unwrap();
    let b = Tensor::new(vec![o], uniform_vec(r, o, -0.1, 0.1)).unwrap();
    Layer::Conv2d {
        params: Params::new(w, Some(b)),
        stride,
        padding,
    }
}

pub fn dense(i: usize, o: usize, r: &mut ChaCha8Rng) -> Layer {
    let w = Tensor::new(vec![o, i], uniform_vec(r, o * i, -0.5, 0.5)).unwrap();
    let b = Tensor::new(vec![o], uniform_vec(r, o, -0.1, 0.1)).unwrap();
    Layer::Dense(Params::new(w, Some(b)))
}

/// Every file under `root`, keyed by relative path.
pub fn dir_bytes(
    root: &std::path::Path,
) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Direct O(N^2) unitary DFT, returning `(re, im)` in natural order.
pub fn naive_dft(plane: &[f64], d1: usize, d2: usize) -> Vec<(f64, f64)> {
    let scale = 1.0 / ((d1 * d2) as f64).sqrt();
    let mut out = Vec::with_capacity(d1 * d2);
    for u in 0..d1 {
        for v in 0..d2 {
            let (mut re, mut im) = (0.0, 0.0);
            for x in 0..d1 {
                for y in 0..d2 {
                    let a = -std::f64::consts::TAU
                        * ((u * x) as f64 / d1 as f64 + (v * y) as f64 / d2 as f64);
                    re += plane[x * d2 + y] * a.cos();
                    im += plane[x * d2 + y] * a.sin();
                }
            }
            out.push((re * scale, im * scale));
        }
    }
    out
}

pub fn naive_radial(image: &[f32], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut plane = vec![0.0; h * w];
    for ch in 0..c {
        for k in 0..h * w {
            plane[k] += image[ch * h * w + k] as f64 / c as f64;
        }
    }
    let spec = naive_dft(&plane, h, w);
    let mut bins: Vec<(f64, usize)> = Vec::new();
    for x in 0..h {
        for y in 0..w {
            let u = if x < h.div_ceil(2) {
                x as f64
            } else {
                x as f64 - h as f64
            };
            let v = if y < w.div_ceil(2) {
                y as f64
            } else {
                y as f64 - w as f64
            };
            let r = (u * u + v * v).sqrt().round() as usize;
            if bins.len() <= r {
                bins.resize(r + 1, (0.0, 0));
            }
            let (re, im) = spec[x * w + y];
            bins[r].0 += re * re + im * im;
            bins[r].1 += 1;
        }
    }
    bins.iter()
        .map(|&(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect()
}
