//! Fourier calculus on the torus: derivatives, Poisson inversion,
//! Leray/Hodge splitting, the deviatoric strain, Sobolev norms and
//! two-thirds dealiasing.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{ScalarField, TensorField, VectorField};

/// Default solvability tolerance for [`poisson_solve`].
pub const DEFAULT_MEAN_TOL: f64 = 1e-10;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Spectral partial derivative `∂_axis f`.
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = f.grid();
    f.map_spectrum(|flat, c| I * grid.derivative_wavevector(flat)[axis] * c)
}

pub fn grad(f: &ScalarField) -> VectorField {
    let comps = (0..f.grid().dim()).map(|a| partial(f, a)).collect();
    VectorField::from_components_unchecked(f.grid(), comps)
}

pub fn div(field: &VectorField) -> ScalarField {
    let grid = field.grid();
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (a, comp) in field.components().iter().enumerate() {
        for (flat, (acc, &c)) in spec.iter_mut().zip(comp.spectrum()).enumerate() {
            *acc += I * grid.derivative_wavevector(flat)[a] * c;
        }
    }
    ScalarField::from_spectrum(grid, spec)
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    f.map_spectrum(|flat, c| -grid.k_squared(flat) * c)
}

/// `Δ^{-1}` on the mean-zero subspace; the mean of `f` is discarded.
pub fn inverse_laplacian(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    f.map_spectrum(|flat, c| {
        let k2 = grid.k_squared(flat);
        if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            -c / k2
        }
    })
}

/// Solves `Δψ = σ` with `mean(ψ) = 0`, rejecting `σ` whose mean exceeds
/// [`DEFAULT_MEAN_TOL`].
pub fn poisson_solve(sigma: &ScalarField) -> Result<ScalarField> {
    poisson_solve_with_tol(sigma, DEFAULT_MEAN_TOL)
}

pub fn poisson_solve_with_tol(sigma: &ScalarField, mean_tol: f64) -> Result<ScalarField> {
    let mean = sigma.mean();
    if mean.abs() > mean_tol {
        return Err(Error::NonZeroMean { mean, tol: mean_tol });
    }
    Ok(inverse_laplacian(sigma))
}

/// Result of the Leray/Hodge split `u = P u + Q u`, `Q u = ∇q`.
#[derive(Debug, Clone)]
pub struct LerayParts {
    /// Divergence-free part, including the constant mode.
    pub solenoidal: VectorField,
    /// Gradient part `∇q`.
    pub gradient: VectorField,
    /// Mean-zero potential `q`.
    pub potential: ScalarField,
}

/// Potential `q` of the gradient part, `Q u = ∇q`, mean zero.
pub fn gradient_potential(u: &VectorField) -> ScalarField {
    let grid = u.grid();
    let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (a, comp) in u.components().iter().enumerate() {
        for (flat, (acc, &c)) in spec.iter_mut().zip(comp.spectrum()).enumerate() {
            *acc += grid.derivative_wavevector(flat)[a] * c;
        }
    }
    for (flat, c) in spec.iter_mut().enumerate() {
        let kd = grid.derivative_wavevector(flat);
        let k2: f64 = kd.iter().map(|k| k * k).sum();
        // q̂ = -i (k·û) / |k|²
        *c = if k2 == 0.0 { Complex64::new(0.0, 0.0) } else { -I * *c / k2 };
    }
    ScalarField::from_spectrum(grid, spec)
}

pub fn leray_decompose(u: &VectorField) -> LerayParts {
    let potential = gradient_potential(u);
    let gradient = grad(&potential);
    let solenoidal = u - &gradient;
    LerayParts { solenoidal, gradient, potential }
}

/// Leray projector `P = I - ∇Δ^{-1}div`.
pub fn project_solenoidal(u: &VectorField) -> VectorField {
    u - &grad(&gradient_potential(u))
}

/// Gradient projector `Q = ∇Δ^{-1}div`.
pub fn project_gradient(u: &VectorField) -> VectorField {
    grad(&gradient_potential(u))
}

/// Velocity gradient `g[i][j] = ∂_i u_j`.
pub fn velocity_gradient(u: &VectorField) -> Vec<Vec<ScalarField>> {
    let d = u.dim();
    (0..d).map(|i| (0..d).map(|j| partial(&u[j], i)).collect()).collect()
}

/// `S(u) = ∇u + (∇u)^T − (2/3)(div u) I`.
pub fn strain(u: &VectorField) -> TensorField {
    strain_from_gradient(u.grid(), &velocity_gradient(u))
}

pub fn strain_from_gradient(grid: crate::Grid, g: &[Vec<ScalarField>]) -> TensorField {
    let d = grid.dim();
    let mut divergence = ScalarField::zeros(grid);
    for (a, row) in g.iter().enumerate().take(d) {
        divergence = &divergence + &row[a];
    }
    TensorField::from_symmetric(grid, |i, j| {
        let sym = &g[i][j] + &g[j][i];
        if i == j {
            sym.add_scaled(-2.0 / 3.0, &divergence)
        } else {
            sym
        }
    })
}

/// `(div T)_j = Σ_i ∂_i T_ij`.
pub fn div_tensor(t: &TensorField) -> VectorField {
    let grid = t.grid();
    let d = grid.dim();
    let comps = (0..d)
        .map(|j| {
            let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
            for i in 0..d {
                for (flat, (acc, &c)) in spec.iter_mut().zip(t.get(i, j).spectrum()).enumerate() {
                    *acc += I * grid.derivative_wavevector(flat)[i] * c;
                }
            }
            ScalarField::from_spectrum(grid, spec)
        })
        .collect();
    VectorField::from_components_unchecked(grid, comps)
}

/// Zeroes every Fourier mode with some `|k_j| > N/3`.
pub trait Dealias: Sized {
    fn dealias(&self) -> Self;
}

impl Dealias for ScalarField {
    fn dealias(&self) -> Self {
        let grid = self.grid();
        self.map_spectrum(|flat, c| if grid.is_aliased(flat) { Complex64::new(0.0, 0.0) } else { c })
    }
}

impl Dealias for VectorField {
    fn dealias(&self) -> Self {
        self.map_components(|_, c| c.dealias())
    }
}

pub fn dealias<F: Dealias>(f: &F) -> F {
    f.dealias()
}

/// Dealiased product of two scalar fields.
pub fn product(a: &ScalarField, b: &ScalarField) -> ScalarField {
    a.pointwise(b).dealias()
}

/// Dealiased product of a vector field with a scalar.
pub fn scale_by(u: &VectorField, s: &ScalarField) -> VectorField {
    u.map_components(|_, c| product(c, s))
}

/// Dealiased `(a·∇) w` given the gradient table of `w` (`gw[i][j] = ∂_i w_j`).
pub fn advect_with(a: &VectorField, gw: &[Vec<ScalarField>]) -> VectorField {
    let grid = a.grid();
    let d = grid.dim();
    let comps = (0..d)
        .map(|j| {
            let mut acc = ScalarField::zeros(grid);
            for i in 0..d {
                acc = &acc + &a[i].pointwise(&gw[i][j]);
            }
            acc.dealias()
        })
        .collect();
    VectorField::from_components_unchecked(grid, comps)
}

/// Dealiased `(a·∇) w`.
pub fn advect(a: &VectorField, w: &VectorField) -> VectorField {
    advect_with(a, &velocity_gradient(w))
}

/// Dealiased `a·∇f`.
pub fn directional(a: &VectorField, f: &ScalarField) -> ScalarField {
    let g = grad(f);
    let mut acc = ScalarField::zeros(f.grid());
    for i in 0..f.grid().dim() {
        acc = &acc + &a[i].pointwise(&g[i]);
    }
    acc.dealias()
}

/// Dealiased `S : ∇w = Σ_ij S_ij ∂_i w_j`.
pub fn contract(s: &TensorField, gw: &[Vec<ScalarField>]) -> ScalarField {
    let grid = s.grid();
    let d = grid.dim();
    let mut acc = ScalarField::zeros(grid);
    for (i, row) in gw.iter().enumerate().take(d) {
        for (j, g) in row.iter().enumerate().take(d) {
            acc = &acc + &s.get(i, j).pointwise(g);
        }
    }
    acc.dealias()
}

/// Dealiased pointwise dot product `a·b`.
pub fn dot(a: &VectorField, b: &VectorField) -> ScalarField {
    let mut acc = ScalarField::zeros(a.grid());
    for (x, y) in a.components().iter().zip(b.components()) {
        acc = &acc + &x.pointwise(y);
    }
    acc.dealias()
}

/// Dealiased `div(f T)` for a scalar `f` and symmetric tensor `T`.
pub fn div_scaled_tensor(f: &ScalarField, t: &TensorField) -> VectorField {
    let grid = t.grid();
    let scaled = TensorField::from_symmetric(grid, |i, j| product(f, t.get(i, j)));
    div_tensor(&scaled)
}

/// Sobolev norm with Fourier weight `(1 + |k|²)^s`:
/// `‖f‖²_{H^s} = (2π)^d Σ_k (1+|k|²)^s |f̂(k)|²`.
pub trait SobolevNorm {
    fn sobolev_norm_squared(&self, s: f64) -> f64;

    fn sobolev_norm(&self, s: f64) -> f64 {
        self.sobolev_norm_squared(s).sqrt()
    }
}

impl SobolevNorm for ScalarField {
    fn sobolev_norm_squared(&self, s: f64) -> f64 {
        let grid = self.grid();
        let sum: f64 = self
            .spectrum()
            .iter()
            .enumerate()
            .map(|(flat, c)| (1.0 + grid.k_squared(flat)).powf(s) * c.norm_sqr())
            .sum();
        sum * grid.volume()
    }
}

impl SobolevNorm for VectorField {
    fn sobolev_norm_squared(&self, s: f64) -> f64 {
        self.components().iter().map(|c| c.sobolev_norm_squared(s)).sum()
    }
}

pub fn sobolev_norm<F: SobolevNorm>(f: &F, s: f64) -> f64 {
    f.sobolev_norm(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Grid;
    use std::f64::consts::PI;

    fn g2(n: usize) -> Grid {
        Grid::new(2, n).unwrap()
    }

    fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        (a - b).max_abs()
    }

    #[test]
    fn grad_of_constant_vanishes() {
        let f = ScalarField::constant(g2(16), 3.5);
        assert!(grad(&f).max_abs() < 1e-14);
    }

    #[test]
    fn grad_of_sine() {
        let g = g2(32);
        let f = ScalarField::from_fn(g, |x| x[0].sin());
        let gf = grad(&f);
        assert!(max_diff(&gf[0], &ScalarField::from_fn(g, |x| x[0].cos())) < 1e-14);
        assert!(gf[1].max_abs() < 1e-14);
    }

    #[test]
    fn grad_matches_analytic_partials() {
        let g = g2(32);
        let f = ScalarField::from_fn(g, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let gf = grad(&f);
        let d0 = ScalarField::from_fn(g, |x| 3.0 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos());
        let d1 = ScalarField::from_fn(g, |x| -2.0 * (3.0 * x[0]).sin() * (2.0 * x[1]).sin());
        assert!(max_diff(&gf[0], &d0) < 1e-12);
        assert!(max_diff(&gf[1], &d1) < 1e-12);
    }

    #[test]
    fn div_grad_and_laplacian() {
        let g = g2(32);
        let f = ScalarField::from_fn(g, |x| x[0].sin());
        assert!(max_diff(&div(&grad(&f)), &f.scale(-1.0)) < 1e-13);
        assert!(div(&VectorField::from_fn(g, |j, _| 1.0 + j as f64)).max_abs() < 1e-14);
        let h = ScalarField::from_fn(g, |x| (2.0 * x[0]).sin() * x[1].sin());
        assert!(max_diff(&laplacian(&h), &h.scale(-5.0)) < 1e-12);
    }

    #[test]
    fn poisson_cases() {
        let g = g2(32);
        assert!(poisson_solve(&ScalarField::zeros(g)).unwrap().max_abs() == 0.0);
        let s = ScalarField::from_fn(g, |x| x[0].sin());
        assert!(max_diff(&poisson_solve(&s).unwrap(), &s.scale(-1.0)) < 1e-13);
        let s = ScalarField::from_fn(g, |x| x[0].cos() + (2.0 * x[1]).cos());
        let want = ScalarField::from_fn(g, |x| -x[0].cos() - (2.0 * x[1]).cos() / 4.0);
        assert!(max_diff(&poisson_solve(&s).unwrap(), &want) < 1e-13);
    }

    #[test]
    fn poisson_rejects_mean() {
        let g = g2(16);
        let s = ScalarField::from_fn(g, |x| 1e-6 + x[0].sin());
        assert!(matches!(poisson_solve(&s), Err(Error::NonZeroMean { .. })));
        assert!(poisson_solve_with_tol(&s, 1e-5).is_ok());
    }

    #[test]
    fn leray_pure_gradient_and_solenoidal() {
        let g = g2(32);
        let q = ScalarField::from_fn(g, |x| x[0].sin());
        let parts = leray_decompose(&grad(&q));
        assert!(parts.solenoidal.max_abs() < 1e-14);
        assert!(max_diff(&parts.potential, &q) < 1e-14);

        let w = VectorField::from_fn(g, |j, x| if j == 0 { -x[1].sin() } else { 0.0 });
        let parts = leray_decompose(&w);
        assert!(parts.gradient.max_abs() < 1e-14);
    }

    #[test]
    fn leray_keeps_constant_in_solenoidal_part() {
        let g = g2(16);
        let c = VectorField::from_fn(g, |j, _| if j == 0 { 2.0 } else { -1.0 });
        let parts = leray_decompose(&c);
        assert!(parts.gradient.max_abs() == 0.0);
        assert!((&parts.solenoidal - &c).max_abs() < 1e-15);
        assert!(parts.potential.mean().abs() < 1e-16);
    }

    #[test]
    fn strain_cases() {
        let g = g2(32);
        let s = strain(&VectorField::from_fn(g, |_, _| 1.0));
        assert!(s.max_abs() < 1e-14);
        let u = VectorField::from_fn(g, |j, x| if j == 0 { x[1].sin() } else { 0.0 });
        let s = strain(&u);
        let c = ScalarField::from_fn(g, |x| x[1].cos());
        assert!(max_diff(s.get(0, 1), &c) < 1e-13);
        assert!(max_diff(s.get(1, 0), &c) < 1e-13);
        assert!(s.get(0, 0).max_abs() < 1e-13 && s.get(1, 1).max_abs() < 1e-13);
    }

    #[test]
    fn strain_trace_rule() {
        let g2d = g2(16);
        let u = VectorField::from_fn(g2d, |j, x| ((j + 1) as f64 * x[0]).sin() + x[1].cos());
        let tr = strain(&u).trace();
        let want = div(&u).scale(2.0 / 3.0);
        assert!(max_diff(&tr, &want) < 1e-12);

        let g3 = Grid::new(3, 8).unwrap();
        let u = VectorField::from_fn(g3, |j, x| (x[j] + x[(j + 1) % 3]).sin() + x[2].cos());
        assert!(strain(&u).trace().max_abs() < 1e-12);
    }

    #[test]
    fn sobolev_values() {
        let g = g2(32);
        assert_eq!(sobolev_norm(&ScalarField::zeros(g), 2.0), 0.0);
        let f = ScalarField::from_fn(g, |x| x[0].sin());
        let l2 = (2.0 * PI * PI).sqrt();
        assert!((sobolev_norm(&f, 0.0) - l2).abs() < 1e-12);
        assert!((sobolev_norm(&f, 2.0) - 2.0 * l2).abs() < 1e-12);
        // quadrature oracle for s = 0
        assert!((f.l2_norm() - l2).abs() < 1e-12);
    }

    #[test]
    fn dealias_cases() {
        let g = g2(32);
        let f = ScalarField::from_fn(g, |x| (10.0 * x[0]).sin() + (3.0 * x[1]).cos());
        assert!(max_diff(&f.dealias(), &f) < 1e-13);
        let h = ScalarField::from_fn(g, |x| (15.0 * x[0]).sin());
        assert!(h.dealias().max_abs() < 1e-14);
    }
}
