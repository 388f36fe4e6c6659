use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::spectral::basis::bin_freq;

/// Guard added to the power spectrum before taking its reciprocal.
pub const RECIPROCAL_GUARD: f64 = 1e-12;

/// Unitary 2D DFT of a real `d1 x d2` row-major plane, in natural FFT order.
pub fn dft2(plane: &[f64], d1: usize, d2: usize) -> Vec<Complex64> {
    assert_eq!(plane.len(), d1 * d2);
    let mut planner = FftPlanner::<f64>::new();
    let rows = planner.plan_fft_forward(d2);
    let cols = planner.plan_fft_forward(d1);
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for r in buf.chunks_exact_mut(d2) {
        rows.process(r);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); d1];
    for y in 0..d2 {
        for x in 0..d1 {
            col[x] = buf[x * d2 + y];
        }
        cols.process(&mut col);
        for x in 0..d1 {
            buf[x * d2 + y] = col[x];
        }
    }
    let scale = 1.0 / ((d1 * d2) as f64).sqrt();
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Spatial dims of an image shaped `(h, w)` or `(c, h, w)`, plus channel count.
fn plane_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w] => Ok((1, h, w)),
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(format!(
            "expected an image of rank 2 or 3, got {shape:?}"
        ))),
    }
}

/// Channel mean of an image, as one `f64` plane.
pub fn mean_plane(image: &[f32], shape: &[usize]) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = plane_dims(shape)?;
    if image.len() != c * h * w {
        return Err(Error::shape("image", shape, &[image.len()]));
    }
    let mut plane = vec![0.0f64; h * w];
    for ch in image.chunks_exact(h * w) {
        for (p, &v) in plane.iter_mut().zip(ch) {
            *p += v as f64;
        }
    }
    plane.iter_mut().for_each(|p| *p /= c as f64);
    Ok((plane, h, w))
}

/// Mean power per integer radius bin, with the bin populations.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSpectrum {
    pub power: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RadialSpectrum {
    /// `sum(power * count)`, i.e. total spectral energy.
    pub fn energy(&self) -> f64 {
        self.power
            .iter()
            .zip(&self.counts)
            .map(|(p, &n)| p * n as f64)
            .sum()
    }
}

/// Radially averaged `|DFT|^2` of the channel-mean plane. Bin `k` holds the
/// frequencies `(u, v)` with `round(sqrt(u^2 + v^2)) == k`; every radius up to
/// the corner of the grid is covered. Empty bins report zero power.
pub fn radial_power_spectrum(image: &[f32], shape: &[usize]) -> Result<RadialSpectrum> {
    let (plane, h, w) = mean_plane(image, shape)?;
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("image {h}x{w} is smaller than 2x2")));
    }
    Ok(radial_of_plane(&plane, h, w))
}

pub(crate) fn radial_of_plane(plane: &[f64], h: usize, w: usize) -> RadialSpectrum {
    let spec = dft2(plane, h, w);
    let radius = |x: usize, y: usize| {
        let (u, v) = (bin_freq(h, x) as f64, bin_freq(w, y) as f64);
        (u * u + v * v).sqrt().round() as usize
    };
    let max_r = (0..h)
        .flat_map(|x| (0..w).map(move |y| (x, y)))
        .map(|(x, y)| radius(x, y))
        .max()
        .unwrap_or(0);
    let mut sums = vec![0.0f64; max_r + 1];
    let mut counts = vec![0usize; max_r + 1];
    for x in 0..h {
        for y in 0..w {
            let r = radius(x, y);
            sums[r] += spec[x * w + y].norm_sqr();
            counts[r] += 1;
        }
    }
    let power = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    RadialSpectrum { power, counts }
}

/// Number of signature components, `floor(min(h, w) / 2) + 1`.
pub fn signature_len(h: usize, w: usize) -> usize {
    h.min(w) / 2 + 1
}

/// Unit-norm reciprocal power spectrum over the first
/// [`signature_len`] radius bins.
pub fn signature(image: &[f32], shape: &[usize]) -> Result<Vec<f64>> {
    let (plane, h, w) = mean_plane(image, shape)?;
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("image {h}x{w} is smaller than 2x2")));
    }
    let spec = radial_of_plane(&plane, h, w);
    let mut v: Vec<f64> = spec.power[..signature_len(h, w)]
        .iter()
        .map(|p| 1.0 / (p + RECIPROCAL_GUARD))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_dc_only() {
        let img = vec![0.5f32; 64];
        let s = radial_power_spectrum(&img, &[8, 8]).unwrap();
        assert!((s.power[0] - 0.25 * 64.0).abs() < 1e-9);
        assert!(s.power[1..].iter().all(|&p| p.abs() < 1e-20));
    }

    #[test]
    fn signature_is_unit_and_scale_invariant() {
        let img: Vec<f32> = (0..3 * 36)
            .map(|k| ((k * 7919) % 13) as f32 / 13.0)
            .collect();
        let a = signature(&img, &[3, 6, 6]).unwrap();
        let scaled: Vec<f32> = img.iter().map(|v| v * 0.5).collect();
        let b = signature(&scaled, &[3, 6, 6]).unwrap();
        assert_eq!(a.len(), 4);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_tiny_images() {
        assert!(radial_power_spectrum(&[1.0, 2.0], &[1, 2]).is_err());
    }
}
