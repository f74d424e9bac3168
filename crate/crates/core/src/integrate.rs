//! Time stepping.
//!
//! Every system is written as `∂_t û = A û + N(û)` over a collection of
//! spectra, with `A` diagonal or 2×2 per wavevector. `A` holds the `1/ε`
//! skew coupling of `(Qu, σ)`, the mean-coefficient diffusion `ν̄Δ` and the
//! friction/relaxation terms; `N = rhs − A û` is everything else. Lawson
//! integrating-factor Runge–Kutta schemes apply `e^{hA}` exactly. `ν̄` is
//! the spatial mean of the temperature, refreshed at the start of each step.
//! After each step the modes outside the two-thirds band are cleared.

use num_complex::Complex64;

use crate::dynamics::{
    forcing_second_order, oscillation_heating, rhs_incompressible_unchecked, rhs_osc_potentials, rhs_scaled,
    rhs_second_order, Closure, CompressibleState, FirstOrderProfile, Forcing, Limits, OscPotentials,
    SecondOrderState, SlowState,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::spectral::{self, SobolevNorm};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    IfRk2,
    #[default]
    IfRk4,
}

/// Which terms are kept. With `nonlinear = false` only the linear part `A`
/// is integrated; `diffusion` and `damping` select what enters `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Physics {
    pub nonlinear: bool,
    pub diffusion: bool,
    pub damping: bool,
}

impl Default for Physics {
    fn default() -> Self {
        Physics { nonlinear: true, diffusion: true, damping: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    pub snapshot_stride: usize,
    pub limits: Limits,
    pub physics: Physics,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt: 5e-4,
            t_final: 0.5,
            scheme: Scheme::IfRk4,
            snapshot_stride: 4,
            limits: Limits::default(),
            physics: Physics::default(),
        }
    }
}

impl StepperConfig {
    /// Number of steps reaching `t_final`; `t_final` must be a multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.t_final >= self.dt) {
            return Err(Error::Config(format!("need 0 < dt <= t_final, got dt={} t_final={}", self.dt, self.t_final)));
        }
        let n = (self.t_final / self.dt).round();
        if ((n * self.dt) - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::Config(format!("t_final={} is not a multiple of dt={}", self.t_final, self.dt)));
        }
        Ok(n as usize)
    }
}

/// Largest stable step: `min(0.5Δx/‖u‖_∞, 0.25Δx²/‖T − ν̄‖_∞)`.
pub fn cfl_limit(grid: Grid, u_max: f64, t_dev: f64) -> f64 {
    let dx = grid.spacing();
    let a = if u_max > 0.0 { 0.5 * dx / u_max } else { f64::INFINITY };
    let b = if t_dev > 0.0 { 0.25 * dx * dx / t_dev } else { f64::INFINITY };
    a.min(b)
}

/// A list of spectra integrated together.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes(pub Vec<Vec<Complex64>>);

impl Modes {
    fn zip_with(&self, other: &Modes, f: impl Fn(Complex64, Complex64) -> Complex64) -> Modes {
        Modes(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        )
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &Modes) -> Modes {
        self.zip_with(other, |x, y| x + y * a)
    }

    fn zeros_like(&self) -> Modes {
        Modes(self.0.iter().map(|s| vec![ZERO; s.len()]).collect())
    }

    fn truncate(&mut self, grid: Grid) {
        for s in &mut self.0 {
            for (flat, c) in s.iter_mut().enumerate() {
                if grid.is_aliased(flat) {
                    *c = ZERO;
                }
            }
        }
    }
}

/// `e^{hM}` for a real 2×2 matrix.
pub fn exp2(h: f64, m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mu = 0.5 * (m[0][0] + m[1][1]);
    let half = 0.5 * (m[0][0] - m[1][1]);
    let delta2 = half * half + m[0][1] * m[1][0];
    let x2 = h * h * delta2;
    let scale = (h * mu).exp();
    let (c, s) = if x2.abs() < 1e-4 {
        (1.0 + x2 / 2.0 + x2 * x2 / 24.0, h * (1.0 + x2 / 6.0 + x2 * x2 / 120.0))
    } else if delta2 > 0.0 {
        let d = delta2.sqrt();
        if h * d < 20.0 {
            ((h * d).cosh(), (h * d).sinh() / d)
        } else {
            let (p, q) = ((h * (mu + d)).exp(), (h * (mu - d)).exp());
            let c = 0.5 * (p + q);
            let s = 0.5 * (p - q) / d;
            return [[c + s * (m[0][0] - mu), s * m[0][1]], [s * m[1][0], c + s * (m[1][1] - mu)]];
        }
    } else {
        let w = (-delta2).sqrt();
        ((h * w).cos(), (h * w).sin() / w)
    };
    let (c, s) = (scale * c, scale * s);
    [[c + s * (m[0][0] - mu), s * m[0][1]], [s * m[1][0], c + s * (m[1][1] - mu)]]
}

/// A system split as `∂_t û = A û + N(û)`.
pub trait SplitSystem {
    fn grid(&self) -> Grid;
    /// Refreshes step-frozen coefficients from the current modes.
    fn refresh(&mut self, m: &Modes);
    /// `e^{hA} m`.
    fn propagate(&self, h: f64, m: &Modes) -> Modes;
    /// `A m`.
    fn linear(&self, m: &Modes) -> Modes;
    /// Full right-hand side.
    fn rhs(&self, m: &Modes) -> Result<Modes>;
    fn physics(&self) -> Physics;

    fn nonlinear(&self, m: &Modes) -> Result<Modes> {
        if !self.physics().nonlinear {
            return Ok(m.zeros_like());
        }
        Ok(self.rhs(m)?.axpy(-1.0, &self.linear(m)))
    }
}

/// One Lawson step.
pub fn lawson_step<S: SplitSystem>(sys: &S, scheme: Scheme, h: f64, u: &Modes) -> Result<Modes> {
    let k1 = sys.nonlinear(u)?;
    let mut out = match scheme {
        Scheme::IfRk2 => {
            let ua = sys.propagate(h, &u.axpy(h, &k1));
            let k2 = sys.nonlinear(&ua)?;
            sys.propagate(h, &u.axpy(0.5 * h, &k1)).axpy(0.5 * h, &k2)
        }
        Scheme::IfRk4 => {
            let half = |m: &Modes| sys.propagate(0.5 * h, m);
            let eu_half = half(u);
            let ua = half(&u.axpy(0.5 * h, &k1));
            let k2 = sys.nonlinear(&ua)?;
            let ub = eu_half.axpy(0.5 * h, &k2);
            let k3 = sys.nonlinear(&ub)?;
            let eu = sys.propagate(h, u);
            let uc = eu.axpy(h, &half(&k3));
            let k4 = sys.nonlinear(&uc)?;
            let mid = half(&k2.axpy(1.0, &k3));
            eu.axpy(h / 6.0, &sys.propagate(h, &k1)).axpy(h / 3.0, &mid).axpy(h / 6.0, &k4)
        }
    };
    out.truncate(sys.grid());
    Ok(out)
}

fn leray_spectra(grid: Grid, comps: &[&[Complex64]]) -> (Vec<Complex64>, Vec<Vec<Complex64>>) {
    let d = grid.dim();
    let mut q = vec![ZERO; grid.len()];
    let mut p: Vec<Vec<Complex64>> = comps.iter().map(|c| c.to_vec()).collect();
    for flat in 0..grid.len() {
        let kd = grid.derivative_wavevector(flat);
        let k2: f64 = kd[..d].iter().map(|k| k * k).sum();
        if k2 == 0.0 {
            continue;
        }
        let mut dot = ZERO;
        for j in 0..d {
            dot += comps[j][flat] * kd[j];
        }
        let qh = -I * dot / k2;
        q[flat] = qh;
        for j in 0..d {
            p[j][flat] -= I * kd[j] * qh;
        }
    }
    (q, p)
}

fn vector_from_parts(grid: Grid, p: &[Vec<Complex64>], q: &[Complex64]) -> VectorField {
    let comps = (0..grid.dim())
        .map(|j| {
            let spec = (0..grid.len())
                .map(|flat| p[j][flat] + I * grid.derivative_wavevector(flat)[j] * q[flat])
                .collect();
            ScalarField::from_spectrum(grid, spec)
        })
        .collect();
    VectorField::from_components(comps).expect("components share a grid")
}

fn spec(f: &ScalarField) -> Vec<Complex64> {
    f.spectrum().to_vec()
}

/// The scaled system on modes `[σ̂, q̂, (Pu)^_1..d, T̂]` with `Qu = ∇q`.
#[derive(Debug, Clone)]
pub struct ScaledSystem {
    pub grid: Grid,
    pub eps: f64,
    pub t0_ref: f64,
    pub nu_bar: f64,
    pub physics: Physics,
    pub limits: Limits,
}

impl ScaledSystem {
    pub fn new(state: &CompressibleState, physics: Physics, limits: Limits) -> Self {
        let mut sys = ScaledSystem {
            grid: state.sigma.grid(),
            eps: state.eps,
            t0_ref: state.t0_ref,
            nu_bar: 0.0,
            physics,
            limits,
        };
        sys.refresh(&sys.to_modes(state));
        sys
    }

    pub fn to_modes(&self, state: &CompressibleState) -> Modes {
        self.fields_to_modes(&state.sigma, &state.u, &state.temp)
    }

    fn fields_to_modes(&self, sigma: &ScalarField, u: &VectorField, temp: &ScalarField) -> Modes {
        let comps: Vec<&[Complex64]> = u.components().iter().map(|c| c.spectrum()).collect();
        let (q, p) = leray_spectra(self.grid, &comps);
        let mut out = vec![spec(sigma), q];
        out.extend(p);
        out.push(spec(temp));
        Modes(out)
    }

    pub fn to_state(&self, m: &Modes) -> CompressibleState {
        let d = self.grid.dim();
        let sigma = ScalarField::from_spectrum(self.grid, m.0[0].clone());
        let u = vector_from_parts(self.grid, &m.0[2..2 + d], &m.0[1]);
        let temp = ScalarField::from_spectrum(self.grid, m.0[2 + d].clone());
        let psi = spectral::inverse_laplacian(&sigma);
        CompressibleState { sigma, u, temp, psi, eps: self.eps, t0_ref: self.t0_ref }
    }

    fn damping(&self) -> f64 {
        if self.physics.damping {
            1.0
        } else {
            0.0
        }
    }

    /// Per-mode `(pair matrix on (q̂, σ̂), Pu rate, T rate)`.
    fn coefficients(&self, flat: usize) -> ([[f64; 2]; 2], f64, f64) {
        let k2 = self.grid.k_squared(flat);
        let kd = self.grid.derivative_wavevector(flat);
        let kd2: f64 = kd[..self.grid.dim()].iter().map(|k| k * k).sum();
        let damp = self.damping();
        let relax = 0.5 * self.eps * self.eps * damp;
        if k2 == 0.0 {
            return ([[0.0, 0.0], [0.0, 0.0]], -damp, -relax);
        }
        let alpha = damp + 4.0 / 3.0 * self.nu_bar * k2;
        let pair = [[-alpha, -1.0 / (k2 * self.eps)], [kd2 / self.eps, 0.0]];
        (pair, -(damp + self.nu_bar * k2), -(5.0 / 6.0 * self.nu_bar * k2 + relax))
    }

    fn apply(&self, m: &Modes, pair_op: impl Fn([[f64; 2]; 2]) -> [[f64; 2]; 2], diag: impl Fn(f64) -> f64) -> Modes {
        let d = self.grid.dim();
        let mut out = m.zeros_like();
        for flat in 0..self.grid.len() {
            let (pair, rp, rt) = self.coefficients(flat);
            let e = pair_op(pair);
            let (q, s) = (m.0[1][flat], m.0[0][flat]);
            out.0[1][flat] = q * e[0][0] + s * e[0][1];
            out.0[0][flat] = q * e[1][0] + s * e[1][1];
            let fp = diag(rp);
            for j in 0..d {
                out.0[2 + j][flat] = m.0[2 + j][flat] * fp;
            }
            out.0[2 + d][flat] = m.0[2 + d][flat] * diag(rt);
        }
        out
    }
}

impl SplitSystem for ScaledSystem {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn refresh(&mut self, m: &Modes) {
        let d = self.grid.dim();
        self.nu_bar = if self.physics.diffusion { m.0[2 + d][0].re } else { 0.0 };
    }

    fn propagate(&self, h: f64, m: &Modes) -> Modes {
        self.apply(m, |p| exp2(h, p), |r| (h * r).exp())
    }

    fn linear(&self, m: &Modes) -> Modes {
        self.apply(m, |p| p, |r| r)
    }

    fn rhs(&self, m: &Modes) -> Result<Modes> {
        let state = self.to_state(m);
        let (ds, du, dt) = rhs_scaled(&state, &self.limits)?;
        Ok(self.fields_to_modes(&ds, &du, &dt))
    }

    fn physics(&self) -> Physics {
        self.physics
    }
}

/// Which parts of the limit dynamics are integrated.
#[derive(Debug, Clone)]
pub enum LimitMode {
    /// `(v, T)` only.
    Slow,
    /// `(v, T, q, φ)` on one clock, with optional oscillation heating in `T`.
    Coupled { heating: bool },
    /// `(q, φ)` with `(v, T)` frozen.
    OscFrozen(SlowState),
}

/// Limit dynamics on modes `[v̂_1..d, T̂, q̂, φ̂]` (subsets per [`LimitMode`]).
#[derive(Debug, Clone)]
pub struct LimitSystem {
    pub grid: Grid,
    pub nu_bar: f64,
    pub physics: Physics,
    pub closure: Closure,
    pub mode: LimitMode,
}

impl LimitSystem {
    pub fn new(grid: Grid, mode: LimitMode, closure: Closure, physics: Physics) -> Self {
        let nu_bar = match &mode {
            LimitMode::OscFrozen(slow) if physics.diffusion => slow.temp.mean(),
            _ => 0.0,
        };
        LimitSystem { grid, nu_bar, physics, closure, mode }
    }

    fn has_slow(&self) -> bool {
        !matches!(self.mode, LimitMode::OscFrozen(_))
    }

    fn has_osc(&self) -> bool {
        !matches!(self.mode, LimitMode::Slow)
    }

    pub fn to_modes(&self, slow: Option<&SlowState>, p: Option<&OscPotentials>) -> Modes {
        let mut out = Vec::new();
        if self.has_slow() {
            let slow = slow.expect("slow state required");
            out.extend(slow.v.components().iter().map(spec));
            out.push(spec(&slow.temp));
        }
        if self.has_osc() {
            let p = p.expect("potentials required");
            out.push(spec(&p.q));
            out.push(spec(&p.phi));
        }
        Modes(out)
    }

    /// Slow fields held by the modes (pressure left at zero).
    pub fn slow_fields(&self, m: &Modes) -> SlowState {
        match &self.mode {
            LimitMode::OscFrozen(slow) => slow.clone(),
            _ => {
                let d = self.grid.dim();
                let comps = (0..d).map(|j| ScalarField::from_spectrum(self.grid, m.0[j].clone())).collect();
                SlowState {
                    v: VectorField::from_components(comps).expect("shared grid"),
                    temp: ScalarField::from_spectrum(self.grid, m.0[d].clone()),
                    pi: ScalarField::zeros(self.grid),
                }
            }
        }
    }

    pub fn potentials(&self, m: &Modes) -> Option<OscPotentials> {
        if !self.has_osc() {
            return None;
        }
        let off = if self.has_slow() { self.grid.dim() + 1 } else { 0 };
        Some(OscPotentials {
            q: ScalarField::from_spectrum(self.grid, m.0[off].clone()),
            phi: ScalarField::from_spectrum(self.grid, m.0[off + 1].clone()),
        })
    }

    fn rates(&self, flat: usize) -> (f64, f64, f64) {
        let k2 = self.grid.k_squared(flat);
        let damp = if self.physics.damping { 1.0 } else { 0.0 };
        (-(damp + self.nu_bar * k2), -(5.0 / 6.0 * self.nu_bar * k2), -(0.5 * damp + 2.0 / 3.0 * self.nu_bar * k2))
    }

    fn apply(&self, m: &Modes, f: impl Fn(f64) -> f64) -> Modes {
        let d = self.grid.dim();
        let mut out = m.clone();
        for flat in 0..self.grid.len() {
            let (rv, rt, rq) = self.rates(flat);
            let mut idx = 0;
            if self.has_slow() {
                let (fv, ft) = (f(rv), f(rt));
                for j in 0..d {
                    out.0[j][flat] *= fv;
                }
                out.0[d][flat] *= ft;
                idx = d + 1;
            }
            if self.has_osc() {
                let fq = f(rq);
                out.0[idx][flat] *= fq;
                out.0[idx + 1][flat] *= fq;
            }
        }
        out
    }
}

impl SplitSystem for LimitSystem {
    fn grid(&self) -> Grid {
        self.grid
    }

    fn refresh(&mut self, m: &Modes) {
        if self.has_slow() {
            self.nu_bar = if self.physics.diffusion { m.0[self.grid.dim()][0].re } else { 0.0 };
        }
    }

    fn propagate(&self, h: f64, m: &Modes) -> Modes {
        self.apply(m, |r| (h * r).exp())
    }

    fn linear(&self, m: &Modes) -> Modes {
        self.apply(m, |r| r)
    }

    fn rhs(&self, m: &Modes) -> Result<Modes> {
        let slow = self.slow_fields(m);
        let mut out = Vec::new();
        let pots = self.potentials(m);
        if self.has_slow() {
            let (dv, mut dt) = rhs_incompressible_unchecked(&slow);
            if let (LimitMode::Coupled { heating: true }, Some(p)) = (&self.mode, &pots) {
                dt = dt.add_scaled(1.0, &oscillation_heating(&slow.temp, &p.q, &p.phi));
            }
            out.extend(dv.components().iter().map(spec));
            out.push(spec(&dt));
        }
        if let Some(p) = pots {
            let (dq, dphi) = rhs_osc_potentials(&p, &slow, self.closure);
            out.push(spec(&dq));
            out.push(spec(&dphi));
        }
        Ok(Modes(out))
    }

    fn physics(&self) -> Physics {
        self.physics
    }
}

/// Per-sample diagnostics of a scaled run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub eps: f64,
    pub mean_sigma: f64,
    pub min_t: f64,
    pub hs_sigma: f64,
    pub hs_u: f64,
    pub hs_t: f64,
    pub energy_se: f64,
}

impl Diagnostics {
    pub fn of(t: f64, state: &CompressibleState, s: f64) -> Self {
        Diagnostics {
            t,
            eps: state.eps,
            mean_sigma: state.sigma.mean(),
            min_t: state.temp.min(),
            hs_sigma: state.sigma.sobolev_norm(s),
            hs_u: state.u.sobolev_norm(s),
            hs_t: state.temp.sobolev_norm(s),
            energy_se: crate::harness::energy_norm_diag(state, s.floor() as usize),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub diagnostics: Vec<Diagnostics>,
}

impl<S> Default for Trajectory<S> {
    fn default() -> Self {
        Trajectory { times: Vec::new(), states: Vec::new(), diagnostics: Vec::new() }
    }
}

/// Stateful integrator for the scaled system.
#[derive(Debug, Clone)]
pub struct ScaledStepper {
    sys: ScaledSystem,
    modes: Modes,
    t: f64,
    cfg: StepperConfig,
}

impl ScaledStepper {
    pub fn new(state: &CompressibleState, cfg: StepperConfig) -> Result<Self> {
        state.check(&cfg.limits)?;
        let sys = ScaledSystem::new(state, cfg.physics, cfg.limits);
        let mut modes = sys.to_modes(state);
        modes.truncate(sys.grid);
        Ok(ScaledStepper { sys, modes, t: 0.0, cfg })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> CompressibleState {
        self.sys.to_state(&self.modes)
    }

    pub fn step(&mut self) -> Result<()> {
        self.sys.refresh(&self.modes);
        let next = lawson_step(&self.sys, self.cfg.scheme, self.cfg.dt, &self.modes)?;
        if next.0.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite(format!("scaled step at t={}", self.t)));
        }
        self.modes = next;
        self.t += self.cfg.dt;
        Ok(())
    }
}

/// Stateful integrator for the limit dynamics.
#[derive(Debug, Clone)]
pub struct LimitStepper {
    sys: LimitSystem,
    modes: Modes,
    t: f64,
    cfg: StepperConfig,
}

impl LimitStepper {
    pub fn new(
        mode: LimitMode,
        slow: Option<&SlowState>,
        p: Option<&OscPotentials>,
        closure: Closure,
        cfg: StepperConfig,
    ) -> Result<Self> {
        let grid = match (slow, p) {
            (Some(s), _) => s.v.grid(),
            (None, Some(p)) => p.q.grid(),
            (None, None) => return Err(Error::Config("limit stepper needs a state".into())),
        };
        let mut sys = LimitSystem::new(grid, mode, closure, cfg.physics);
        let mut modes = sys.to_modes(slow, p);
        modes.truncate(grid);
        sys.refresh(&modes);
        Ok(LimitStepper { sys, modes, t: 0.0, cfg })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Slow state with pressure recovered.
    pub fn slow(&self) -> SlowState {
        let s = self.sys.slow_fields(&self.modes);
        SlowState::new(s.v, s.temp).expect("shared grid")
    }

    /// Slow fields without the pressure solve.
    pub fn slow_fields(&self) -> SlowState {
        self.sys.slow_fields(&self.modes)
    }

    pub fn potentials(&self) -> Option<OscPotentials> {
        self.sys.potentials(&self.modes)
    }

    pub fn step(&mut self) -> Result<()> {
        if self.sys.has_slow() {
            let temp = ScalarField::from_spectrum(self.sys.grid, self.modes.0[self.sys.grid.dim()].clone());
            let min = temp.min();
            if min < self.cfg.limits.t_floor {
                return Err(Error::TemperatureFloor { min, floor: self.cfg.limits.t_floor });
            }
        }
        self.sys.refresh(&self.modes);
        let next = lawson_step(&self.sys, self.cfg.scheme, self.cfg.dt, &self.modes)?;
        if next.0.iter().flatten().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite(format!("limit step at t={}", self.t)));
        }
        self.modes = next;
        self.t += self.cfg.dt;
        Ok(())
    }
}

/// Advances the scaled system by one step.
pub fn step_scaled(state: &CompressibleState, cfg: &StepperConfig) -> Result<CompressibleState> {
    let mut st = ScaledStepper::new(state, *cfg)?;
    st.step()?;
    Ok(st.state())
}

/// Advances the incompressible limit by one step.
pub fn step_incompressible(state: &SlowState, cfg: &StepperConfig) -> Result<SlowState> {
    let mut st = LimitStepper::new(LimitMode::Slow, Some(state), None, Closure::default(), *cfg)?;
    st.step()?;
    Ok(st.slow())
}

/// Advances the oscillation potentials by one step with `slow` frozen.
pub fn step_osc_potentials(
    p: &OscPotentials,
    slow: &SlowState,
    closure: Closure,
    cfg: &StepperConfig,
) -> Result<OscPotentials> {
    let mut st = LimitStepper::new(LimitMode::OscFrozen(slow.clone()), None, Some(p), closure, *cfg)?;
    st.step()?;
    Ok(st.potentials().expect("potentials present"))
}

/// Integrates the scaled system to `cfg.t_final`, recording every
/// `snapshot_stride` steps.
pub fn run_scaled(state: &CompressibleState, cfg: &StepperConfig, s_index: f64) -> Result<Trajectory<CompressibleState>> {
    let steps = cfg.steps()?;
    let stride = cfg.snapshot_stride.max(1);
    let mut st = ScaledStepper::new(state, *cfg)?;
    let mut traj = Trajectory::default();
    let record = |st: &ScaledStepper, traj: &mut Trajectory<CompressibleState>| {
        let s = st.state();
        traj.diagnostics.push(Diagnostics::of(st.time(), &s, s_index));
        traj.times.push(st.time());
        traj.states.push(s);
    };
    record(&st, &mut traj);
    for i in 1..=steps {
        st.step()?;
        if i % stride == 0 || i == steps {
            record(&st, &mut traj);
        }
    }
    Ok(traj)
}

/// Fast-time trajectory of the second-order corrector.
#[derive(Debug, Clone, Default)]
pub struct SecondOrderTrajectory {
    pub s: Vec<f64>,
    pub states: Vec<SecondOrderState>,
    /// `‖(σ_2f, u_2f, T_2f)‖_{L²}` at each recorded time.
    pub norms: Vec<f64>,
}

impl SecondOrderTrajectory {
    pub fn sup_norm(&self) -> f64 {
        self.norms.iter().cloned().fold(0.0, f64::max)
    }
}

fn corrector_norm(st: &SecondOrderState) -> f64 {
    (st.sigma.inner(&st.sigma) + st.u.inner(&st.u) + st.temp.inner(&st.temp)).sqrt()
}

fn combine(base: &SecondOrderState, h: f64, k: &(ScalarField, VectorField, ScalarField)) -> SecondOrderState {
    SecondOrderState {
        sigma: base.sigma.add_scaled(h, &k.0),
        u: base.u.add_scaled(h, &k.1),
        temp: base.temp.add_scaled(h, &k.2),
        psi: base.psi.clone(),
        s: base.s + h,
    }
}

/// RK4 in fast time from zero data with an arbitrary forcing supplier.
pub fn integrate_second_order_with(
    grid: Grid,
    horizon_s: f64,
    ds: f64,
    record_stride: usize,
    mean_tol: f64,
    forcing_at: impl Fn(f64) -> Result<Forcing>,
) -> Result<SecondOrderTrajectory> {
    let steps = (horizon_s / ds).round() as usize;
    let stride = record_stride.max(1);
    let mut st = SecondOrderState::zeros(grid);
    let mut traj = SecondOrderTrajectory::default();
    let record = |st: &SecondOrderState, traj: &mut SecondOrderTrajectory| {
        traj.s.push(st.s);
        traj.norms.push(corrector_norm(st));
        traj.states.push(st.clone());
    };
    record(&st, &mut traj);
    let mut f0 = forcing_at(0.0)?;
    for i in 1..=steps {
        let s = st.s;
        let fh = forcing_at(s + 0.5 * ds)?;
        let f1 = forcing_at(s + ds)?;
        let k1 = rhs_second_order(&st, &f0, mean_tol)?;
        let k2 = rhs_second_order(&combine(&st, 0.5 * ds, &k1), &fh, mean_tol)?;
        let k3 = rhs_second_order(&combine(&st, 0.5 * ds, &k2), &fh, mean_tol)?;
        let k4 = rhs_second_order(&combine(&st, ds, &k3), &f1, mean_tol)?;
        let mut next = combine(&st, ds / 6.0, &k1);
        next = combine(&next, ds / 3.0, &k2);
        next = combine(&next, ds / 3.0, &k3);
        next = combine(&next, ds / 6.0, &k4);
        next.s = s + ds;
        next.psi = spectral::inverse_laplacian(&next.sigma);
        let mean = next.sigma.mean();
        if mean.abs() > mean_tol {
            return Err(Error::NonZeroMean { mean, tol: mean_tol });
        }
        st = next;
        f0 = f1;
        if i % stride == 0 || i == steps {
            record(&st, &mut traj);
        }
    }
    Ok(traj)
}

/// Integrates the corrector in fast time `s ∈ [0, horizon_s]` with
/// forcings assembled from the slow fields and first-order profile supplied
/// at each `s`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_second_order(
    grid: Grid,
    horizon_s: f64,
    ds: f64,
    record_stride: usize,
    mean_tol: f64,
    closure: Closure,
    slow_at: impl Fn(f64) -> SlowState,
    profile_at: impl Fn(f64) -> FirstOrderProfile,
) -> Result<SecondOrderTrajectory> {
    integrate_second_order_with(grid, horizon_s, ds, record_stride, mean_tol, |s| {
        Ok(forcing_second_order(&slow_at(s), &profile_at(s), closure))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::compose_first_order;
    use crate::random::{random_scalar, random_vector};
    use crate::spectral::{grad, project_gradient, project_solenoidal};
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(2, 32).unwrap()
    }

    fn cfg(dt: f64, t_final: f64) -> StepperConfig {
        StepperConfig { dt, t_final, snapshot_stride: 1, ..Default::default() }
    }

    fn smooth_state(eps: f64) -> CompressibleState {
        let g = grid();
        CompressibleState::new(
            random_scalar(g, 3, 0, 3, 0.3),
            random_vector(g, 3, 1, 3, 0.3),
            random_scalar(g, 3, 2, 3, 0.1).map(|x| x + 1.0),
            eps,
            1.0,
            &Limits::default(),
        )
        .unwrap()
    }

    fn state_distance(a: &CompressibleState, b: &CompressibleState) -> f64 {
        ((&a.sigma - &b.sigma).l2_norm().powi(2)
            + (&a.u - &b.u).l2_norm().powi(2)
            + (&a.temp - &b.temp).l2_norm().powi(2))
        .sqrt()
    }

    #[test]
    fn exp2_matches_series() {
        let cases = [
            [[-1.0, -100.0], [100.0, 0.0]],
            [[-50.0, -1.0], [400.0, 0.0]],
            [[-3.0, 0.5], [0.2, -1.0]],
            [[0.0, 0.0], [0.0, 0.0]],
            [[-1e-3, -1e-3], [1e-3, 0.0]],
        ];
        for m in cases {
            for h in [1e-3, 0.01, 0.1] {
                // reference: scaling and squaring of a Taylor series
                let j = 20;
                let hs = h / (1u64 << j) as f64;
                let mut e = [[1.0, 0.0], [0.0, 1.0]];
                let mut term = [[1.0, 0.0], [0.0, 1.0]];
                for n in 1..12 {
                    let mut next = [[0.0; 2]; 2];
                    for r in 0..2 {
                        for c in 0..2 {
                            next[r][c] = (term[r][0] * m[0][c] + term[r][1] * m[1][c]) * hs / n as f64;
                        }
                    }
                    term = next;
                    for r in 0..2 {
                        for c in 0..2 {
                            e[r][c] += term[r][c];
                        }
                    }
                }
                for _ in 0..j {
                    let mut sq = [[0.0; 2]; 2];
                    for r in 0..2 {
                        for c in 0..2 {
                            sq[r][c] = e[r][0] * e[0][c] + e[r][1] * e[1][c];
                        }
                    }
                    e = sq;
                }
                let got = exp2(h, m);
                for r in 0..2 {
                    for c in 0..2 {
                        assert!((got[r][c] - e[r][c]).abs() < 1e-9 * (1.0 + e[r][c].abs()), "{m:?} {h}");
                    }
                }
            }
        }
    }

    #[test]
    fn equilibrium_is_preserved() {
        let st = CompressibleState::equilibrium(grid(), 0.05, 1.0);
        for dt in [1e-3, 0.1] {
            let next = step_scaled(&st, &cfg(dt, dt)).unwrap();
            assert!(state_distance(&st, &next) < 1e-13);
        }
    }

    #[test]
    fn linear_rotation_is_exact() {
        let g = grid();
        let eps = 0.05;
        let u = grad(&ScalarField::from_fn(g, |x| x[0].sin()));
        let st = CompressibleState::new(
            ScalarField::zeros(g),
            u,
            ScalarField::constant(g, 1.0),
            eps,
            1.0,
            &Limits::default(),
        )
        .unwrap();
        let physics = Physics { nonlinear: false, diffusion: false, damping: false };
        let steps = 37;
        let c = StepperConfig { dt: 2.0 * PI * eps / steps as f64, physics, ..cfg(1.0, 1.0) };
        let mut stepper = ScaledStepper::new(&st, c).unwrap();
        let energy = |s: &CompressibleState| {
            let qu = project_gradient(&s.u);
            let gp = grad(&s.psi);
            qu.inner(&qu) + gp.inner(&gp)
        };
        let e0 = energy(&st);
        for _ in 0..steps {
            let before = energy(&stepper.state());
            stepper.step().unwrap();
            assert!((energy(&stepper.state()) - before).abs() < 1e-12 * e0);
        }
        assert!(state_distance(&stepper.state(), &st) < 1e-10);
    }

    #[test]
    fn scaled_self_convergence() {
        let st = smooth_state(0.1);
        let t_final = 0.2;
        for (scheme, min_ratio) in [(Scheme::IfRk2, 3.5), (Scheme::IfRk4, 3.5)] {
            let run = |dt: f64| {
                let c = StepperConfig { scheme, ..cfg(dt, t_final) };
                run_scaled(&st, &c, 0.0).unwrap().states.pop().unwrap()
            };
            let reference = run(0.0025 / 8.0);
            let e1 = state_distance(&run(0.01), &reference);
            let e2 = state_distance(&run(0.005), &reference);
            assert!(e1 / e2 >= min_ratio, "{scheme:?}: {e1} {e2}");
        }
    }

    #[test]
    fn scaled_conserves_mass() {
        let st = smooth_state(0.05);
        let traj = run_scaled(&st, &cfg(0.005, 0.2), 3.0).unwrap();
        for d in &traj.diagnostics {
            assert!(d.mean_sigma.abs() <= 1e-10);
            assert!(d.energy_se.is_finite());
        }
    }

    #[test]
    fn floors_abort() {
        let g = grid();
        let mut st = smooth_state(0.1);
        st.temp = ScalarField::constant(g, 0.01);
        assert!(matches!(step_scaled(&st, &cfg(0.01, 0.01)), Err(Error::TemperatureFloor { .. })));
    }

    fn slow_state() -> SlowState {
        let g = grid();
        SlowState::new(
            project_solenoidal(&random_vector(g, 5, 0, 3, 0.4)),
            random_scalar(g, 5, 1, 3, 0.1).map(|x| x + 1.0),
        )
        .unwrap()
    }

    #[test]
    fn incompressible_rest_and_divergence() {
        let rest = SlowState::rest(grid(), 1.0);
        let next = step_incompressible(&rest, &cfg(0.1, 0.1)).unwrap();
        assert!(next.v.max_abs() < 1e-14 && (&next.temp - &rest.temp).max_abs() < 1e-14);

        let mut st = LimitStepper::new(LimitMode::Slow, Some(&slow_state()), None, Closure::default(), cfg(0.005, 0.5))
            .unwrap();
        for _ in 0..100 {
            st.step().unwrap();
            assert!(spectral::div(&st.slow_fields().v).l2_norm() <= 1e-11);
        }
    }

    #[test]
    fn incompressible_single_mode_decay() {
        let g = grid();
        let nu = 0.8;
        let amp = 0.01;
        let v = VectorField::from_fn(g, |j, x| if j == 0 { amp * x[1].sin() } else { 0.0 });
        let slow = SlowState::new(v, ScalarField::constant(g, nu)).unwrap();
        let c = cfg(0.01, 1.0);
        let mut st = LimitStepper::new(LimitMode::Slow, Some(&slow), None, Closure::default(), c).unwrap();
        for _ in 0..100 {
            st.step().unwrap();
        }
        let got = st.slow_fields().v[0].max_abs();
        let expect = amp * (-(1.0 + nu)).exp();
        assert!((got / expect - 1.0).abs() < 0.01);
    }

    #[test]
    fn incompressible_self_convergence() {
        let slow = slow_state();
        let run = |dt: f64| {
            let mut st = LimitStepper::new(LimitMode::Slow, Some(&slow), None, Closure::default(), cfg(dt, 0.2)).unwrap();
            for _ in 0..(0.2 / dt).round() as usize {
                st.step().unwrap();
            }
            st.slow_fields()
        };
        let r = run(0.01 / 8.0);
        let err = |s: SlowState| ((&s.v - &r.v).l2_norm().powi(2) + (&s.temp - &r.temp).l2_norm().powi(2)).sqrt();
        let (e1, e2) = (err(run(0.02)), err(run(0.01)));
        assert!(e1 / e2 >= 3.5, "{e1} {e2}");
    }

    #[test]
    fn oscillation_pure_damping() {
        let g = grid();
        let p = OscPotentials::new(random_scalar(g, 1, 0, 3, 1.0), random_scalar(g, 1, 1, 3, 1.0)).unwrap();
        let frozen = SlowState::rest(g, 0.0);
        let mut q = p.clone();
        let dt = 0.05;
        for _ in 0..20 {
            q = step_osc_potentials(&q, &frozen, Closure::default(), &cfg(dt, dt)).unwrap();
        }
        let expect = p.q.scale((-0.5f64).exp());
        assert!((&q.q - &expect).max_abs() < 1e-10);
        assert!(step_osc_potentials(&OscPotentials::zeros(g), &slow_state(), Closure::default(), &cfg(dt, dt))
            .unwrap()
            .q
            .max_abs()
            == 0.0);
    }

    #[test]
    fn oscillation_self_convergence_and_bound() {
        let g = grid();
        let slow = slow_state();
        let p = OscPotentials::new(random_scalar(g, 2, 0, 3, 0.5), random_scalar(g, 2, 1, 3, 0.5)).unwrap();
        let run = |dt: f64| {
            let mode = LimitMode::Coupled { heating: true };
            let mut st = LimitStepper::new(mode, Some(&slow), Some(&p), Closure::default(), cfg(dt, 0.2)).unwrap();
            let mut sup: f64 = 0.0;
            for _ in 0..(0.2 / dt).round() as usize {
                st.step().unwrap();
                let pp = st.potentials().unwrap();
                sup = sup.max((grad(&pp.q).sobolev_norm(3.0).powi(2) + grad(&pp.phi).sobolev_norm(3.0).powi(2)).sqrt());
            }
            (st.potentials().unwrap(), sup)
        };
        let (r, sup) = run(0.01 / 8.0);
        let err = |s: OscPotentials| ((&s.q - &r.q).l2_norm().powi(2) + (&s.phi - &r.phi).l2_norm().powi(2)).sqrt();
        let (e1, e2) = (err(run(0.02).0), err(run(0.01).0));
        assert!(e1 / e2 >= 3.5, "{e1} {e2}");
        let init = (grad(&p.q).sobolev_norm(3.0).powi(2) + grad(&p.phi).sobolev_norm(3.0).powi(2)).sqrt();
        assert!(sup.is_finite() && sup / init < 10.0);
    }

    #[test]
    fn second_order_trivial_forcings() {
        let g = Grid::new(2, 16).unwrap();
        let zero = integrate_second_order_with(g, 1.0, 0.1, 1, 1e-10, |_| Ok(Forcing::zeros(g))).unwrap();
        assert!(zero.sup_norm() == 0.0);
        let c = 0.3;
        let lin = integrate_second_order_with(g, 2.0, 0.1, 1, 1e-10, |_| {
            Ok(Forcing { temp: ScalarField::constant(g, c), ..Forcing::zeros(g) })
        })
        .unwrap();
        for st in &lin.states {
            assert!((&st.temp - &ScalarField::constant(g, c * st.s)).max_abs() < 1e-13);
            assert!(st.sigma.max_abs() == 0.0 && st.u.max_abs() == 0.0);
        }
    }

    #[test]
    fn second_order_skew_energy() {
        // free evolution from nonzero gradient data via a pulse forcing on the first step
        let g = grid();
        let q = random_scalar(g, 4, 0, 3, 0.5);
        let ds = 0.01;
        let traj = integrate_second_order_with(g, 5.0, ds, 10, 1e-10, |s| {
            let f = if s < 0.5 { project_gradient(&grad(&q)) } else { VectorField::zeros(g) };
            Ok(Forcing { u: f, ..Forcing::zeros(g) })
        })
        .unwrap();
        let energy = |st: &SecondOrderState| {
            let gp = grad(&st.psi);
            st.u.inner(&st.u) + gp.inner(&gp)
        };
        let after: Vec<f64> = traj.states.iter().filter(|st| st.s > 0.6).map(energy).collect();
        let e0 = after[0];
        for e in &after {
            assert!((e - e0).abs() < 1e-8 * e0);
        }
    }

    #[test]
    fn second_order_with_profiles_runs() {
        let g = Grid::new(2, 16).unwrap();
        let slow = SlowState::new(
            project_solenoidal(&random_vector(g, 1, 0, 2, 0.3)),
            random_scalar(g, 1, 1, 2, 0.1).map(|x| x + 1.0),
        )
        .unwrap();
        let p = OscPotentials::new(random_scalar(g, 1, 2, 2, 0.3), random_scalar(g, 1, 3, 2, 0.3)).unwrap();
        let eps = 0.01;
        let traj = integrate_second_order(
            g,
            2.0,
            0.05,
            1,
            1e-10,
            Closure::Consistent,
            |_| slow.clone(),
            |s| compose_first_order(eps * s, eps, &p),
        )
        .unwrap();
        assert!(traj.sup_norm().is_finite() && traj.sup_norm() > 0.0);
    }

    #[test]
    fn step_config_validation() {
        assert!(cfg(0.1, 0.05).steps().is_err());
        assert!(cfg(0.1, 0.25).steps().is_err());
        assert_eq!(cfg(0.1, 0.5).steps().unwrap(), 5);
        let g = grid();
        assert!((cfl_limit(g, 1.0, 0.0) - 0.5 * g.spacing()).abs() < 1e-15);
        assert_eq!(cfl_limit(g, 0.0, 0.0), f64::INFINITY);
    }
}
