//! Fourier perturbations, error heatmaps and radial power-spectrum signatures.
//!
//! Transforms are unitary with frequencies reported in the centered range
//! `-floor(d/2) ..= ceil(d/2) - 1`.

mod basis;
mod heatmap;
mod spectrum;

pub use basis::{bin_freq, centered_index, conjugate, fourier_basis, freq_range, FourierBasis};
pub use heatmap::{diff_heatmap, heatmap, perturb, Heatmap, HeatmapConfig};
pub use spectrum::{
    dft2, mean_plane, radial_power_spectrum, signature, signature_len, RadialSpectrum,
    RECIPROCAL_GUARD,
};
