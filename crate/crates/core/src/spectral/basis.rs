use crate::error::{Error, Result};

/// Centered frequency range for a dimension of size `d`:
/// `-floor(d/2) ..= ceil(d/2) - 1`.
pub fn freq_range(d: usize) -> std::ops::RangeInclusive<i64> {
    let lo = -((d / 2) as i64);
    lo..=(d.div_ceil(2) as i64 - 1)
}

/// Index in `0..d` of centered frequency `f`; DC sits at `floor(d/2)`.
pub fn centered_index(d: usize, f: i64) -> usize {
    (f + (d / 2) as i64) as usize
}

/// Centered frequency of DFT bin `k` (natural FFT order).
pub fn bin_freq(d: usize, k: usize) -> i64 {
    if k < d.div_ceil(2) {
        k as i64
    } else {
        k as i64 - d as i64
    }
}

/// `-f` folded back into the centered range.
pub fn conjugate(d: usize, f: i64) -> i64 {
    let d = d as i64;
    let lo = -(d / 2);
    (-f - lo).rem_euclid(d) + lo
}

/// Real basis image for frequency `(i, j)`: a zero-phase cosine
/// `cos(2 pi (i x / d1 + j y / d2))` scaled to unit Frobenius norm. Its DFT is
/// supported on `(i, j)` and `(-i, -j)` only.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    pub d1: usize,
    pub d2: usize,
    pub i: i64,
    pub j: i64,
    /// Row-major `d1 x d2`.
    pub matrix: Vec<f64>,
}

pub fn fourier_basis(d1: usize, d2: usize, i: i64, j: i64) -> Result<FourierBasis> {
    if d1 == 0 || d2 == 0 || !freq_range(d1).contains(&i) || !freq_range(d2).contains(&j) {
        return Err(Error::Frequency { i, j, d1, d2 });
    }
    let tau = std::f64::consts::TAU;
    let mut matrix = Vec::with_capacity(d1 * d2);
    for x in 0..d1 {
        for y in 0..d2 {
            // Reduce the phase in integers so large grids stay exact.
            let px = (i.rem_euclid(d1 as i64) as usize * x) % d1;
            let py = (j.rem_euclid(d2 as i64) as usize * y) % d2;
            matrix.push((tau * (px as f64 / d1 as f64 + py as f64 / d2 as f64)).cos());
        }
    }
    let norm = matrix.iter().map(|v| v * v).sum::<f64>().sqrt();
    matrix.iter_mut().for_each(|v| *v /= norm);
    Ok(FourierBasis {
        d1,
        d2,
        i,
        j,
        matrix,
    })
}
