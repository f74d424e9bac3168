//! Right-hand sides of the scaled compressible system, the incompressible
//! limit, the oscillation potentials and the second-order corrector, plus
//! composition of the approximate solution and the symmetrizer check.
//!
//! The scaled system, with `n = 1 + εσ` and `Δψ = σ`:
//!
//! ```text
//! ∂_t σ = −(1/ε) div u − div(σu)
//! ∂_t u = (1/ε)∇ψ − u·∇u − (εT/n)∇σ − ∇T + (1/n) div(n T S(u)) − u
//! ∂_t T = −(2/3)T div u − u·∇T + (5/(6n)) div(n T ∇T) − (2/3)T S(u):∇u
//!         + (1/3)|u|² + (ε²/2)(T_0 − T)
//! ```

use crate::error::{Error, Result};
use crate::field::{ScalarField, TensorField, VectorField};
use crate::oscillation::{exp_tau_l, PhasePair};
use crate::spectral::{
    self, advect, advect_with, contract, directional, div, div_scaled_tensor, dot, grad, gradient_potential,
    laplacian, poisson_solve_with_tol, product, project_gradient, project_solenoidal, scale_by, strain,
    strain_from_gradient, velocity_gradient, DEFAULT_MEAN_TOL,
};

/// Pointwise admissibility thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub mean_tol: f64,
    pub rho_floor: f64,
    pub t_floor: f64,
}

impl Limits {
    /// Defaults for a given lower temperature bound `T_L`: floor `T_L/4`.
    pub fn for_temperature_bound(t_l: f64) -> Self {
        Limits { mean_tol: DEFAULT_MEAN_TOL, rho_floor: 0.1, t_floor: t_l / 4.0 }
    }
}

impl Default for Limits {
    fn default() -> Self {
        Self::for_temperature_bound(0.5)
    }
}

fn check_temperature(temp: &ScalarField, limits: &Limits) -> Result<()> {
    let min = temp.min();
    if !(min >= limits.t_floor) {
        return Err(Error::TemperatureFloor { min, floor: limits.t_floor });
    }
    Ok(())
}

/// Which oscillation closure to use.
///
/// `Consistent` uses `−vΔq` in the potential equations, half friction in the
/// second-order forcings and subtracts the oscillation heating from the
/// temperature forcing. `Naive` uses `+vΔq`, full friction and no heating
/// term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Closure {
    #[default]
    Consistent,
    Naive,
}

impl Closure {
    fn resonance_sign(self) -> f64 {
        match self {
            Closure::Consistent => -1.0,
            Closure::Naive => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompressibleState {
    pub sigma: ScalarField,
    pub u: VectorField,
    pub temp: ScalarField,
    pub psi: ScalarField,
    pub eps: f64,
    pub t0_ref: f64,
}

impl CompressibleState {
    /// Builds a state and solves for `ψ`; rejects inadmissible data.
    pub fn new(
        sigma: ScalarField,
        u: VectorField,
        temp: ScalarField,
        eps: f64,
        t0_ref: f64,
        limits: &Limits,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        let grid = sigma.grid();
        grid.ensure_same(&u.grid())?;
        grid.ensure_same(&temp.grid())?;
        let psi = poisson_solve_with_tol(&sigma, limits.mean_tol)?;
        let state = CompressibleState { sigma, u, temp, psi, eps, t0_ref };
        state.check(limits)?;
        Ok(state)
    }

    pub fn equilibrium(grid: crate::Grid, eps: f64, t0_ref: f64) -> Self {
        CompressibleState {
            sigma: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
            temp: ScalarField::constant(grid, t0_ref),
            psi: ScalarField::zeros(grid),
            eps,
            t0_ref,
        }
    }

    pub fn density(&self) -> ScalarField {
        self.sigma.map(|s| 1.0 + self.eps * s)
    }

    pub fn check(&self, limits: &Limits) -> Result<()> {
        if !(self.sigma.is_finite() && self.u.is_finite() && self.temp.is_finite()) {
            return Err(Error::NonFinite("compressible state".into()));
        }
        let mean = self.sigma.mean();
        if mean.abs() > limits.mean_tol {
            return Err(Error::NonZeroMean { mean, tol: limits.mean_tol });
        }
        let min = self.density().min();
        if min < limits.rho_floor {
            return Err(Error::DensityFloor { min, floor: limits.rho_floor });
        }
        check_temperature(&self.temp, limits)
    }
}

/// Time derivatives `(∂_t σ, ∂_t u, ∂_t T)` of the scaled system.
pub fn rhs_scaled(state: &CompressibleState, limits: &Limits) -> Result<(ScalarField, VectorField, ScalarField)> {
    state.check(limits)?;
    let CompressibleState { sigma, u, temp, eps, t0_ref, .. } = state;
    let eps = *eps;
    let psi = poisson_solve_with_tol(sigma, limits.mean_tol)?;

    let g = velocity_gradient(u);
    let s = strain_from_gradient(u.grid(), &g);
    let div_u = div(u);
    let n = state.density();
    let inv_n = n.map(|x| 1.0 / x);
    let nt = product(&n, temp);

    let d_sigma = div_u.scale(-1.0 / eps).add_scaled(-1.0, &div(&scale_by(u, sigma)));

    let viscous = scale_by(&div_scaled_tensor(&nt, &s), &inv_n);
    let pressure = scale_by(&grad(sigma), &product(temp, &inv_n)).scale(eps);
    let du = grad(&psi)
        .scale(1.0 / eps)
        .add_scaled(-1.0, &advect_with(u, &g))
        .add_scaled(-1.0, &pressure)
        .add_scaled(-1.0, &grad(temp))
        .add_scaled(1.0, &viscous)
        .add_scaled(-1.0, u);

    let conduction = product(&inv_n, &div(&scale_by(&grad(temp), &nt)));
    let dt = product(temp, &div_u)
        .scale(-2.0 / 3.0)
        .add_scaled(-1.0, &directional(u, temp))
        .add_scaled(5.0 / 6.0, &conduction)
        .add_scaled(-2.0 / 3.0, &product(temp, &contract(&s, &g)))
        .add_scaled(1.0 / 3.0, &dot(u, u))
        .add_scaled(-0.5 * eps * eps, &temp.map(|x| x - t0_ref));
    Ok((d_sigma, du, dt))
}

#[derive(Debug, Clone)]
pub struct SlowState {
    pub v: VectorField,
    pub temp: ScalarField,
    pub pi: ScalarField,
}

impl SlowState {
    /// Builds the state, recovering the pressure.
    pub fn new(v: VectorField, temp: ScalarField) -> Result<Self> {
        v.grid().ensure_same(&temp.grid())?;
        let pi = ScalarField::zeros(v.grid());
        let mut state = SlowState { v, temp, pi };
        state.pi = recover_pressure(&state);
        Ok(state)
    }

    /// Rest state with constant temperature.
    pub fn rest(grid: crate::Grid, temp: f64) -> Self {
        SlowState { v: VectorField::zeros(grid), temp: ScalarField::constant(grid, temp), pi: ScalarField::zeros(grid) }
    }
}

/// Unprojected momentum right-hand side `−v·∇v − ∇T + div(T S(v)) − v`.
fn momentum_residual(v: &VectorField, temp: &ScalarField) -> VectorField {
    let g = velocity_gradient(v);
    let s = strain_from_gradient(v.grid(), &g);
    advect_with(v, &g)
        .scale(-1.0)
        .add_scaled(-1.0, &grad(temp))
        .add_scaled(1.0, &div_scaled_tensor(temp, &s))
        .add_scaled(-1.0, v)
}

/// `(∂_t v, ∂_t T)` of the incompressible limit system.
pub fn rhs_incompressible(state: &SlowState, limits: &Limits) -> Result<(VectorField, ScalarField)> {
    check_temperature(&state.temp, limits)?;
    Ok(rhs_incompressible_unchecked(state))
}

pub(crate) fn rhs_incompressible_unchecked(state: &SlowState) -> (VectorField, ScalarField) {
    let SlowState { v, temp, .. } = state;
    let dv = project_solenoidal(&momentum_residual(v, temp));
    let g = velocity_gradient(v);
    let s = strain_from_gradient(v.grid(), &g);
    let dt = directional(v, temp)
        .scale(-1.0)
        .add_scaled(5.0 / 6.0, &div(&scale_by(&grad(temp), temp)))
        .add_scaled(-2.0 / 3.0, &product(temp, &contract(&s, &g)))
        .add_scaled(1.0 / 3.0, &dot(v, v));
    (dv, dt)
}

/// `Π = Δ^{-1} div[−v·∇v − ∇T + div(T S(v)) − v]`, mean zero.
pub fn recover_pressure(state: &SlowState) -> ScalarField {
    gradient_potential(&momentum_residual(&state.v, &state.temp))
}

#[derive(Debug, Clone)]
pub struct OscPotentials {
    pub q: ScalarField,
    pub phi: ScalarField,
}

impl OscPotentials {
    pub fn new(q: ScalarField, phi: ScalarField) -> Result<Self> {
        q.grid().ensure_same(&phi.grid())?;
        for f in [&q, &phi] {
            if f.mean().abs() > DEFAULT_MEAN_TOL {
                return Err(Error::NonZeroMean { mean: f.mean(), tol: DEFAULT_MEAN_TOL });
            }
        }
        Ok(OscPotentials { q, phi })
    }

    pub fn zeros(grid: crate::Grid) -> Self {
        OscPotentials { q: ScalarField::zeros(grid), phi: ScalarField::zeros(grid) }
    }

    /// Initial potentials: `∇q = Q u_I`, `∇φ = ∇ψ_I`.
    pub fn from_initial_data(u_i: &VectorField, psi_i: &ScalarField) -> Self {
        let grid = psi_i.grid();
        OscPotentials {
            q: gradient_potential(u_i),
            phi: psi_i.add_scaled(-1.0, &ScalarField::constant(grid, psi_i.mean())),
        }
    }
}

fn osc_potential_rhs(f: &ScalarField, slow: &SlowState, closure: Closure) -> ScalarField {
    let w = grad(f);
    let v = &slow.v;
    let bracket = advect(&w, v)
        .scale(-1.0)
        .add_scaled(-1.0, &advect(v, &w))
        .add_scaled(closure.resonance_sign(), &scale_by(v, &laplacian(f)))
        .add_scaled(1.0, &div_scaled_tensor(&slow.temp, &strain(&w)));
    gradient_potential(&bracket).scale(0.5).add_scaled(-0.5, f)
}

/// Potential-level right-hand sides `(∂_t q, ∂_t φ)` of the oscillation
/// system `2∂_t∇q = Q{−(∇q·∇)v − (v·∇)∇q ∓ vΔq + div[T S(∇q)]} − ∇q`.
pub fn rhs_osc_potentials(p: &OscPotentials, slow: &SlowState, closure: Closure) -> (ScalarField, ScalarField) {
    (osc_potential_rhs(&p.q, slow, closure), osc_potential_rhs(&p.phi, slow, closure))
}

/// Fast-time mean of the oscillation contribution to the temperature
/// equation: `−(1/3)T[S(∇q):∇∇q + S(∇φ):∇∇φ] + (1/6)(|∇q|² + |∇φ|²)`.
///
/// Invariant under rotations of `(q, φ)`, so any phase of the first-order
/// profile gives the same value.
pub fn oscillation_heating(temp: &ScalarField, q: &ScalarField, phi: &ScalarField) -> ScalarField {
    let mut acc = ScalarField::zeros(temp.grid());
    for f in [q, phi] {
        let w = grad(f);
        let g = velocity_gradient(&w);
        let s = strain_from_gradient(w.grid(), &g);
        acc = acc
            .add_scaled(-1.0 / 3.0, &product(temp, &contract(&s, &g)))
            .add_scaled(1.0 / 6.0, &dot(&w, &w));
    }
    acc
}

#[derive(Debug, Clone)]
pub struct FirstOrderProfile {
    pub u: VectorField,
    pub grad_psi: VectorField,
    pub sigma: ScalarField,
    pub psi: ScalarField,
    /// Potential of `u`: `u = ∇q`.
    pub q: ScalarField,
}

impl FirstOrderProfile {
    pub fn zeros(grid: crate::Grid) -> Self {
        FirstOrderProfile {
            u: VectorField::zeros(grid),
            grad_psi: VectorField::zeros(grid),
            sigma: ScalarField::zeros(grid),
            psi: ScalarField::zeros(grid),
            q: ScalarField::zeros(grid),
        }
    }
}

/// `(u_1f, ∇ψ_1f) = e^{−(t/ε)L}(∇q, ∇φ)`, `σ_1f = Δψ_1f`.
pub fn compose_first_order(t: f64, eps: f64, p: &OscPotentials) -> FirstOrderProfile {
    let pair = exp_tau_l(-t / eps, &PhasePair::from_potentials(&p.q, &p.phi));
    let q = pair.q().clone();
    let psi = pair.phi().clone();
    FirstOrderProfile { u: grad(&q), grad_psi: grad(&psi), sigma: laplacian(&psi), psi, q }
}

/// Forcings `(F_σ, F_u, F_T)` of the second-order corrector.
#[derive(Debug, Clone)]
pub struct Forcing {
    pub sigma: ScalarField,
    pub u: VectorField,
    pub temp: ScalarField,
}

impl Forcing {
    pub fn zeros(grid: crate::Grid) -> Self {
        Forcing { sigma: ScalarField::zeros(grid), u: VectorField::zeros(grid), temp: ScalarField::zeros(grid) }
    }
}

/// Forcings of the second-order corrector.
///
/// Index-free products read as `u∇w ≔ (u·∇)w`, `T S(v)∇u ≔ T S(v):∇u` and
/// `T∇u ≔ T div u`.
pub fn forcing_second_order(slow: &SlowState, prof: &FirstOrderProfile, closure: Closure) -> Forcing {
    let SlowState { v, temp, .. } = slow;
    let u1 = &prof.u;
    let w = &prof.grad_psi;
    let s1 = &prof.sigma;
    let div_u1 = laplacian(&prof.q);
    let vu = v + u1;
    let (sign, half) = match closure {
        Closure::Consistent => (1.0, 0.5),
        Closure::Naive => (-1.0, 1.0),
    };

    let inner_sigma = advect(w, v)
        .add_scaled(1.0, &advect(v, w))
        .add_scaled(sign, &scale_by(v, s1))
        .add_scaled(-1.0, &div_scaled_tensor(temp, &strain(w)));
    let f_sigma = div(&inner_sigma)
        .scale(0.5)
        .add_scaled(half, s1)
        .add_scaled(-1.0, &div(&scale_by(&vu, s1)));

    let g1 = velocity_gradient(u1);
    let s_u1 = strain_from_gradient(u1.grid(), &g1);
    let visc1 = div_scaled_tensor(temp, &s_u1);
    let inner_u = advect(u1, v)
        .add_scaled(1.0, &advect_with(v, &g1))
        .add_scaled(sign, &scale_by(v, &div_u1))
        .add_scaled(-1.0, &visc1);
    let mut f_u = project_gradient(&inner_u)
        .scale(0.5)
        .add_scaled(-1.0, &advect(u1, &vu))
        .add_scaled(-1.0, &advect_with(v, &g1))
        .add_scaled(1.0, &visc1);
    if closure == Closure::Consistent {
        f_u = f_u.add_scaled(-0.5, u1);
    }

    let gvu = velocity_gradient(&vu);
    let f_t = product(temp, &div_u1)
        .scale(-2.0 / 3.0)
        .add_scaled(-1.0, &directional(u1, temp))
        .add_scaled(-2.0 / 3.0, &product(temp, &contract(&strain(v), &g1)))
        .add_scaled(-2.0 / 3.0, &product(temp, &contract(&s_u1, &gvu)))
        .add_scaled(2.0 / 3.0, &dot(v, u1))
        .add_scaled(1.0 / 3.0, &dot(u1, u1));
    let f_t = match closure {
        Closure::Consistent => f_t.add_scaled(-1.0, &oscillation_heating(temp, &prof.q, &prof.psi)),
        Closure::Naive => f_t,
    };
    Forcing { sigma: f_sigma, u: f_u, temp: f_t }
}

#[derive(Debug, Clone)]
pub struct SecondOrderState {
    pub sigma: ScalarField,
    pub u: VectorField,
    pub temp: ScalarField,
    pub psi: ScalarField,
    /// Fast time.
    pub s: f64,
}

impl SecondOrderState {
    pub fn zeros(grid: crate::Grid) -> Self {
        SecondOrderState {
            sigma: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
            temp: ScalarField::zeros(grid),
            psi: ScalarField::zeros(grid),
            s: 0.0,
        }
    }
}

/// `(F_σ − div u_2f, F_u + ∇ψ_2f, F_T)`.
pub fn rhs_second_order(
    st: &SecondOrderState,
    forcing: &Forcing,
    mean_tol: f64,
) -> Result<(ScalarField, VectorField, ScalarField)> {
    let psi = poisson_solve_with_tol(&st.sigma, mean_tol)?;
    Ok((
        forcing.sigma.add_scaled(-1.0, &div(&st.u)),
        forcing.u.add_scaled(1.0, &grad(&psi)),
        forcing.temp.clone(),
    ))
}

#[derive(Debug, Clone)]
pub struct ApproxState {
    pub sigma: ScalarField,
    pub u: VectorField,
    pub temp: ScalarField,
    pub psi: ScalarField,
}

/// `σ_app = σ_1f + εσ_2f`, `u_app = v + u_1f + εu_2f`, `T_app = T + εT_2f`.
pub fn compose_approximation(
    t: f64,
    eps: f64,
    slow: &SlowState,
    p: &OscPotentials,
    st2: &SecondOrderState,
    t_l: f64,
) -> Result<ApproxState> {
    let prof = compose_first_order(t, eps, p);
    let temp = slow.temp.add_scaled(eps, &st2.temp);
    let min = temp.min();
    if min < t_l / 2.0 {
        return Err(Error::TemperatureFloor { min, floor: t_l / 2.0 });
    }
    Ok(ApproxState {
        sigma: prof.sigma.add_scaled(eps, &st2.sigma),
        u: slow.v.add_scaled(1.0, &prof.u).add_scaled(eps, &st2.u),
        temp,
        psi: prof.psi.add_scaled(eps, &st2.psi),
    })
}

/// Which symmetrizer pair to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetrizer {
    /// Unscaled variables `(n, v, T)`.
    Physical,
    /// Error-system variables `(σ, u, T)` with `n = 1 + εσ`.
    Error,
}

type Mat = Vec<Vec<f64>>;

fn zeros(m: usize) -> Mat {
    vec![vec![0.0; m]; m]
}

/// `A_j` at one node for state `(n, v, T)`; unknowns ordered `(n, v_1..v_d, T)`.
pub fn flux_matrix(kind: Symmetrizer, n: f64, v: &[f64], temp: f64, eps: f64, j: usize) -> Mat {
    let d = v.len();
    let m = d + 2;
    let mut a = zeros(m);
    let (a01, a10, a12, a21) = match kind {
        Symmetrizer::Physical => (n, temp / (eps * eps * n), 1.0 / (eps * eps), 2.0 / 3.0 * temp),
        Symmetrizer::Error => (n / eps, eps * temp / n, 1.0, 2.0 / 3.0 * temp),
    };
    a[0][1 + j] = a01;
    a[1 + j][0] = a10;
    a[1 + j][m - 1] = a12;
    a[m - 1][1 + j] = a21;
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += v[j];
    }
    a
}

/// Diagonal symmetrizer `A_0`.
pub fn symmetrizer_matrix(kind: Symmetrizer, n: f64, d: usize, temp: f64, eps: f64) -> Mat {
    let m = d + 2;
    let mut a = zeros(m);
    let (first, last) = match kind {
        Symmetrizer::Physical => (temp / (eps * eps * n * n), 3.0 / (2.0 * eps * eps * temp)),
        Symmetrizer::Error => (eps * eps * temp / (n * n), 3.0 / (2.0 * temp)),
    };
    a[0][0] = first;
    for i in 1..=d {
        a[i][i] = 1.0;
    }
    a[m - 1][m - 1] = last;
    a
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let m = a.len();
    let mut c = zeros(m);
    for i in 0..m {
        for k in 0..m {
            for j in 0..m {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn asymmetry(a: &Mat) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            worst = worst.max((x - a[j][i]).abs());
        }
    }
    worst
}

/// Largest `|A_0A_j − (A_0A_j)^T|` over nodes, directions and both
/// symmetrizer pairs.
pub fn symmetrizer_check(state: &CompressibleState, limits: &Limits) -> Result<f64> {
    state.check(limits)?;
    let grid = state.sigma.grid();
    let d = grid.dim();
    let n = state.density();
    let mut worst = 0.0f64;
    let mut v = vec![0.0; d];
    for node in 0..grid.len() {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = state.u[i].values()[node];
        }
        let (nn, t) = (n.values()[node], state.temp.values()[node]);
        for kind in [Symmetrizer::Physical, Symmetrizer::Error] {
            let a0 = symmetrizer_matrix(kind, nn, d, t, state.eps);
            for j in 0..d {
                let p = mat_mul(&a0, &flux_matrix(kind, nn, &v, t, state.eps, j));
                worst = worst.max(asymmetry(&p));
            }
        }
    }
    Ok(worst)
}

/// Tensor `S(u)` re-exported for callers assembling diagnostics.
pub fn strain_tensor(u: &VectorField) -> TensorField {
    spectral::strain(u)
}
