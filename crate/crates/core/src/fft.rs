//! Multi-dimensional complex FFTs on periodic grids.
//!
//! The forward transform is normalized by `1/N^d`, so spectral values are
//! Fourier-series coefficients and `(2π)^d Σ|f̂|²` equals the continuum
//! `L²` norm squared.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<PlanCache> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

fn transform_in_place(grid: Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n();
    let total = grid.len();
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut lines = vec![Complex64::new(0.0, 0.0); total];
    for axis in 0..grid.dim() {
        let stride = n.pow((grid.dim() - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        let outer = total / (n * stride);
        for o in 0..outer {
            for i in 0..stride {
                let line = (o * stride + i) * n;
                let base = o * n * stride + i;
                for j in 0..n {
                    lines[line + j] = data[base + j * stride];
                }
            }
        }
        fft.process_with_scratch(&mut lines, &mut scratch);
        for o in 0..outer {
            for i in 0..stride {
                let line = (o * stride + i) * n;
                let base = o * n * stride + i;
                for j in 0..n {
                    data[base + j * stride] = lines[line + j];
                }
            }
        }
    }
}

/// Forward transform of real samples, normalized by `1/N^d`.
pub fn forward(grid: Grid, values: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_in_place(grid, &mut data, false);
    let scale = 1.0 / grid.len() as f64;
    data.iter_mut().for_each(|c| *c *= scale);
    data
}

/// Inverse transform (no normalization; inverse of [`forward`]).
pub fn inverse(grid: Grid, spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut data = spectrum.to_vec();
    transform_in_place(grid, &mut data, true);
    data
}

/// Projects a spectrum onto the Hermitian-symmetric subspace, i.e. onto the
/// transform of the real part of its inverse.
pub fn hermitianize(grid: Grid, spectrum: &mut [Complex64]) {
    for flat in 0..grid.len() {
        let c = grid.conjugate_index(flat);
        if c < flat {
            continue;
        }
        let a = spectrum[flat];
        let b = spectrum[c];
        let sym = 0.5 * (a + b.conj());
        spectrum[flat] = sym;
        spectrum[c] = sym.conj();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_coefficient() {
        let g = Grid::new(2, 16).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| g.coords(i)[1].cos() * 2.0).collect();
        let s = forward(g, &vals);
        // 2 cos(x_2) = e^{i x_2} + e^{-i x_2}
        assert!((s[1] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((s[15] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        let back = inverse(g, &s);
        for (a, b) in back.iter().zip(&vals) {
            assert!((a.re - b).abs() < 1e-13 && a.im.abs() < 1e-13);
        }
    }

    #[test]
    fn round_trip_3d() {
        let g = Grid::new(3, 8).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
        let back = inverse(g, &forward(g, &vals));
        for (a, b) in back.iter().zip(&vals) {
            assert!((a.re - b).abs() < 1e-12);
        }
    }
}
