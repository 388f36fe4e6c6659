use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::nn::{count_correct, Dataset, Network};
use crate::rng;
use crate::spectral::basis::{centered_index, conjugate, fourier_basis, freq_range, FourierBasis};

const SIGN_STREAM: u64 = 0x4845_4154;

/// `image + r_c * eps * U` per channel `c`, clamped to `range` when given.
pub fn perturb(
    image: &[f32],
    shape: &[usize],
    basis: &FourierBasis,
    eps: f64,
    signs: &[f32],
    range: Option<(f32, f32)>,
) -> Result<Vec<f32>> {
    let (c, h, w) = match *shape {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::invalid(format!(
                "expected an image shape, got {shape:?}"
            )))
        }
    };
    if (h, w) != (basis.d1, basis.d2) {
        return Err(Error::shape(
            "perturbed image",
            &[basis.d1, basis.d2],
            &[h, w],
        ));
    }
    if image.len() != c * h * w || signs.len() != c {
        return Err(Error::shape("image channels", &[c], &[signs.len()]));
    }
    let mut out = Vec::with_capacity(image.len());
    for (ch, &r) in image.chunks_exact(h * w).zip(signs) {
        for (&x, &u) in ch.iter().zip(&basis.matrix) {
            let mut v = (x as f64 + r as f64 * eps * u) as f32;
            if let Some((lo, hi)) = range {
                v = v.clamp(lo, hi);
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Error rate per centered frequency. `grid` is row-major `d1 x d2` with DC at
/// `(floor(d1/2), floor(d2/2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub d1: usize,
    pub d2: usize,
    pub eps: f64,
    pub model_id: String,
    pub grid: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, i: i64, j: i64) -> f64 {
        self.grid[centered_index(self.d1, i) * self.d2 + centered_index(self.d2, j)]
    }

    /// `(i, j, value)` for every cell, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        freq_range(self.d1)
            .flat_map(move |i| freq_range(self.d2).map(move |j| (i, j)))
            .map(move |(i, j)| (i, j, self.get(i, j)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,error\n");
        for (i, j, v) in self.cells() {
            s.push_str(&format!("{i},{j},{v}\n"));
        }
        s
    }

    /// 8-bit binary PGM. Error maps use `round(clamp(v, 0, 1) * 255)`;
    /// difference maps first shift `[-1, 1]` onto `[0, 1]` via `(v + 1) / 2`.
    pub fn to_pgm(&self, difference: bool) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.d2, self.d1).into_bytes();
        out.extend(self.grid.iter().map(|&v| {
            let v = if difference { (v + 1.0) / 2.0 } else { v };
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        }));
        out
    }

    pub fn save(&self, stem: impl AsRef<Path>, difference: bool) -> Result<()> {
        let stem = stem.as_ref();
        let csv = stem.with_extension("csv");
        std::fs::write(&csv, self.to_csv()).at(&csv)?;
        let pgm = stem.with_extension("pgm");
        let mut f = std::fs::File::create(&pgm).at(&pgm)?;
        f.write_all(&self.to_pgm(difference)).at(&pgm)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub eps: f64,
    pub seed: u64,
    /// Pixel range perturbed images are clamped into.
    pub value_range: Option<(f32, f32)>,
    pub model_id: String,
}

/// One cell per conjugate pair, written to both positions.
fn canonical_cells(d1: usize, d2: usize) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for i in freq_range(d1) {
        for j in freq_range(d2) {
            let (ci, cj) = (conjugate(d1, i), conjugate(d2, j));
            if (i, j) <= (ci, cj) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Error of `net` on `data` perturbed by each Fourier basis matrix. Signs are
/// drawn per image and channel from a stream owned by the cell, so the result
/// does not depend on how cells are scheduled.
pub fn heatmap(net: &Network, data: &Dataset, cfg: &HeatmapConfig) -> Result<Heatmap> {
    if data.is_empty() {
        return Err(Error::Empty("heatmap evaluation set"));
    }
    let shape = data.sample_shape().to_vec();
    let (c, d1, d2) = match *shape.as_slice() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::invalid(format!(
                "expected image samples, got {shape:?}"
            )))
        }
    };
    let cells = canonical_cells(d1, d2);
    let errors: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let basis = fourier_basis(d1, d2, i, j)?;
            let mut stream = rng::stream(cfg.seed, &[SIGN_STREAM, i as u64, j as u64]);
            let mut signs = vec![0f32; c];
            let perturbed = data.map_images(|_, img| {
                signs
                    .iter_mut()
                    .for_each(|s| *s = if stream.random::<bool>() { 1.0 } else { -1.0 });
                perturb(img, &shape, &basis, cfg.eps, &signs, cfg.value_range)
                    .expect("shapes checked")
            })?;
            let correct = count_correct(net, &perturbed)?;
            Ok(1.0 - correct as f64 / data.len() as f64)
        })
        .collect();
    let mut grid = vec![f64::NAN; d1 * d2];
    for (&(i, j), e) in cells.iter().zip(errors) {
        let e = e?;
        let (ci, cj) = (conjugate(d1, i), conjugate(d2, j));
        grid[centered_index(d1, i) * d2 + centered_index(d2, j)] = e;
        grid[centered_index(d1, ci) * d2 + centered_index(d2, cj)] = e;
    }
    Ok(Heatmap {
        d1,
        d2,
        eps: cfg.eps,
        model_id: cfg.model_id.clone(),
        grid,
    })
}

/// Cellwise `h - baseline`.
pub fn diff_heatmap(h: &Heatmap, baseline: &Heatmap) -> Result<Heatmap> {
    if (h.d1, h.d2) != (baseline.d1, baseline.d2) {
        return Err(Error::HeatmapMismatch(format!(
            "{}x{} vs {}x{}",
            h.d1, h.d2, baseline.d1, baseline.d2
        )));
    }
    if h.eps != baseline.eps {
        return Err(Error::HeatmapMismatch(format!(
            "eps {} vs {}",
            h.eps, baseline.eps
        )));
    }
    Ok(Heatmap {
        d1: h.d1,
        d2: h.d2,
        eps: h.eps,
        model_id: format!("{}-minus-{}", h.model_id, baseline.model_id),
        grid: h
            .grid
            .iter()
            .zip(&baseline.grid)
            .map(|(a, b)| a - b)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_cells_cover_grid() {
        for (d1, d2) in [(4, 4), (5, 4), (3, 3), (2, 6)] {
            let cells = canonical_cells(d1, d2);
            let mut seen = vec![false; d1 * d2];
            for (i, j) in cells {
                seen[centered_index(d1, i) * d2 + centered_index(d2, j)] = true;
                let (ci, cj) = (conjugate(d1, i), conjugate(d2, j));
                seen[centered_index(d1, ci) * d2 + centered_index(d2, cj)] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn zero_eps_is_identity() {
        let b = fourier_basis(2, 2, 0, -1).unwrap();
        let img = [0.1f32, 0.2, 0.3, 0.4];
        let out = perturb(&img, &[1, 2, 2], &b, 0.0, &[-1.0], Some((0.0, 1.0))).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn pgm_mapping() {
        let h = Heatmap {
            d1: 1,
            d2: 3,
            eps: 1.0,
            model_id: "m".into(),
            grid: vec![0.0, 0.5, 1.0],
        };
        let p = h.to_pgm(false);
        assert_eq!(&p[p.len() - 3..], &[0, 128, 255]);
        let d = Heatmap {
            grid: vec![-1.0, 0.0, 1.0],
            ..h
        };
        let p = d.to_pgm(true);
        assert_eq!(&p[p.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn diff_rejects_eps_mismatch() {
        let a = Heatmap {
            d1: 1,
            d2: 1,
            eps: 1.0,
            model_id: "a".into(),
            grid: vec![0.2],
        };
        let b = Heatmap {
            eps: 2.0,
            ..a.clone()
        };
        assert!(diff_heatmap(&a, &b).is_err());
        assert_eq!(diff_heatmap(&a, &a).unwrap().grid, vec![0.0]);
    }
}
