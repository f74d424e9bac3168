//! Reproducible band-limited random fields.
//!
//! Draws come from a counter-based SplitMix64 construction: the value for
//! `(seed, stream, counter)` is
//!
//! ```text
//! key   = mix(seed + φ·(stream + 1))
//! value = mix(key + φ·(counter + 1))          φ = 0x9E3779B97F4A7C15
//! u     = (value >> 11) · 2^-53               in [0, 1)
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and all arithmetic wraps mod
//! 2^64. Fourier coefficients are indexed by wavevector, not by grid slot,
//! so the same seed yields the same continuum field on every resolution that
//! resolves the band.

use num_complex::Complex64;

use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` for `(seed, stream, counter)`.
pub fn uniform(seed: u64, stream: u64, counter: u64) -> f64 {
    let key = mix(seed.wrapping_add(GOLDEN.wrapping_mul(stream.wrapping_add(1))));
    let value = mix(key.wrapping_add(GOLDEN.wrapping_mul(counter.wrapping_add(1))));
    (value >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Mean-zero random scalar field with modes `max_j |k_j| <= band`,
/// spectral weight `(1 + |k|²)^{-1}`, rescaled to the given RMS amplitude.
///
/// `band` must stay below the two-thirds cutoff of the grid for the field to
/// be exactly representable.
pub fn random_scalar(grid: Grid, seed: u64, stream: u64, band: usize, amplitude: f64) -> ScalarField {
    let b = band as i64;
    let width = (2 * b + 1) as u64;
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (flat, c) in spec.iter_mut().enumerate() {
        let k = grid.wavevector(flat);
        if k[..grid.dim()].iter().any(|&kj| kj.abs() > b) || grid.k_squared(flat) == 0.0 {
            continue;
        }
        let mut code = 0u64;
        for &kj in &k[..grid.dim()] {
            code = code * width + (kj + b) as u64;
        }
        let re = 2.0 * uniform(seed, stream, 2 * code) - 1.0;
        let im = 2.0 * uniform(seed, stream, 2 * code + 1) - 1.0;
        *c = Complex64::new(re, im) / (1.0 + grid.k_squared(flat));
    }
    let f = ScalarField::from_spectrum(grid, spec);
    let rms = (f.values().iter().map(|v| v * v).sum::<f64>() / grid.len() as f64).sqrt();
    if rms == 0.0 {
        return f;
    }
    f.scale(amplitude / rms)
}

/// Random vector field; component `j` uses stream `stream * 8 + j`.
pub fn random_vector(grid: Grid, seed: u64, stream: u64, band: usize, amplitude: f64) -> VectorField {
    let comps = (0..grid.dim())
        .map(|j| random_scalar(grid, seed, stream * 8 + j as u64, band, amplitude))
        .collect();
    VectorField::from_components_unchecked(grid, comps)
}
