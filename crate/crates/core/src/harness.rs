//! Experiments: initial data, the ε-sweep with error metrics and rate fits,
//! the fast-time averaging oracle and the energy diagnostic.

use std::io::Write;

use rayon::prelude::*;

use crate::dynamics::{
    compose_first_order, rhs_osc_potentials, Closure, CompressibleState, Limits, OscPotentials, SlowState,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::integrate::{
    cfl_limit, integrate_second_order, Diagnostics, LimitMode, LimitStepper, Physics, ScaledStepper, Scheme,
    StepperConfig,
};
use crate::oscillation::PhasePair;
use crate::random::{random_scalar, random_vector};
use crate::spectral::{
    self, gradient_potential, laplacian, project_gradient, project_solenoidal, SobolevNorm, DEFAULT_MEAN_TOL,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub n: usize,
    pub s_index: f64,
    pub tau: f64,
    pub eps_list: Vec<f64>,
    pub seed: u64,
    pub band: usize,
    pub amp_v: f64,
    pub amp_qu: f64,
    pub amp_psi: f64,
    pub t_mean: f64,
    pub amp_t: f64,
    pub amp_sigma_e: f64,
    pub amp_u_e: f64,
    pub amp_t_e: f64,
    pub t_l: f64,
    pub t0: f64,
    pub dt: f64,
    pub stride: usize,
    pub scheme: Scheme,
    pub closure: Closure,
    pub heating: bool,
    pub second_order: bool,
    pub slope_min: f64,
    pub mean_tol: f64,
    pub rho_floor: f64,
    pub t_floor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dim: 2,
            n: 64,
            s_index: 3.0,
            tau: 0.5,
            eps_list: vec![0.1, 0.05, 0.025, 0.0125],
            seed: 20240601,
            band: 1,
            amp_v: 0.3,
            amp_qu: 0.3,
            amp_psi: 0.1,
            t_mean: 1.0,
            amp_t: 0.1,
            amp_sigma_e: 0.5,
            amp_u_e: 0.5,
            amp_t_e: 0.5,
            t_l: 0.5,
            t0: 1.0,
            dt: 5e-4,
            stride: 4,
            scheme: Scheme::IfRk4,
            closure: Closure::Consistent,
            heating: true,
            second_order: false,
            slope_min: 0.8,
            mean_tol: DEFAULT_MEAN_TOL,
            rho_floor: 0.1,
            t_floor: 0.125,
        }
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n)
    }

    pub fn limits(&self) -> Limits {
        Limits { mean_tol: self.mean_tol, rho_floor: self.rho_floor, t_floor: self.t_floor }
    }

    pub fn stepper(&self) -> StepperConfig {
        StepperConfig {
            dt: self.dt,
            t_final: self.tau,
            scheme: self.scheme,
            snapshot_stride: self.stride,
            limits: self.limits(),
            physics: Physics::default(),
        }
    }

    /// Zero oscillatory data.
    pub fn well_prepared(&self) -> Self {
        ExperimentConfig { amp_qu: 0.0, amp_psi: 0.0, ..self.clone() }
    }

    /// Structural checks that need no field data.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let d = grid.dim() as f64;
        if !(self.s_index > d / 2.0 + 1.0) {
            return Err(Error::Config(format!("s = {} must exceed d/2 + 1 = {}", self.s_index, d / 2.0 + 1.0)));
        }
        if self.eps_list.is_empty() {
            return Err(Error::Config("eps list is empty".into()));
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::Config("every eps must lie in (0, 1)".into()));
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("eps list must be strictly decreasing".into()));
        }
        if 3 * self.band >= self.n {
            return Err(Error::Config(format!("band {} is not resolved on N = {}", self.band, self.n)));
        }
        for (name, a) in [
            ("amp_v", self.amp_v),
            ("amp_qu", self.amp_qu),
            ("amp_psi", self.amp_psi),
            ("amp_t", self.amp_t),
            ("amp_sigma_e", self.amp_sigma_e),
            ("amp_u_e", self.amp_u_e),
            ("amp_t_e", self.amp_t_e),
        ] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite nonnegative number")));
            }
        }
        if !(self.t_l > 0.0) {
            return Err(Error::Config("T_L must be positive".into()));
        }
        if !(self.slope_min > 0.0) {
            return Err(Error::Config("slope_min must be positive".into()));
        }
        self.stepper().steps()?;
        Ok(())
    }

    /// Fit validation for sweeps.
    pub fn validate_sweep(&self) -> Result<()> {
        self.validate()?;
        if self.eps_list.len() < 3 {
            return Err(Error::InsufficientFit(self.eps_list.len()));
        }
        Ok(())
    }
}

/// Consistent initial data for one ε.
#[derive(Debug, Clone)]
pub struct InitialData {
    pub state: CompressibleState,
    pub slow: SlowState,
    pub potentials: OscPotentials,
    /// `‖Δψ_I‖_{H^{s+1}} + ‖Qu_I‖_{H^{s+1}} + ‖v_I‖_{H^{s+1}} + ‖T_I‖_{H^{s+1}}`
    /// plus the perturbation norms in `H^s`.
    pub hypothesis_norm: f64,
}

/// Builds `σ = Δψ_I + εσ^E`, `u = v_I + Qu_I + εu^E`, `T = T_I + εT^E`.
///
/// Streams: 0 `v_I`, 1 `Qu_I`, 2 `ψ_I`, 3 `T_I`, 4 `σ^E`, 5 `u^E`, 6 `T^E`.
pub fn build_initial_data(cfg: &ExperimentConfig, eps: f64) -> Result<InitialData> {
    let grid = cfg.grid()?;
    let (seed, band) = (cfg.seed, cfg.band);
    let v_i = project_solenoidal(&random_vector(grid, seed, 0, band, cfg.amp_v));
    let qu_i = project_gradient(&random_vector(grid, seed, 1, band, cfg.amp_qu));
    let psi_i = random_scalar(grid, seed, 2, band, cfg.amp_psi);
    let t_i = random_scalar(grid, seed, 3, band, cfg.amp_t).map(|x| x + cfg.t_mean);
    let sigma_e = random_scalar(grid, seed, 4, band, cfg.amp_sigma_e);
    let u_e = random_vector(grid, seed, 5, band, cfg.amp_u_e);
    let t_e = random_scalar(grid, seed, 6, band, cfg.amp_t_e);

    if t_i.min() < cfg.t_l {
        return Err(Error::Config(format!("initial temperature min {} is below T_L = {}", t_i.min(), cfg.t_l)));
    }
    let sigma = laplacian(&psi_i).add_scaled(eps, &sigma_e);
    let u = v_i.add_scaled(1.0, &qu_i).add_scaled(eps, &u_e);
    let temp = t_i.add_scaled(eps, &t_e);
    let state = CompressibleState::new(sigma, u, temp, eps, cfg.t0, &cfg.limits())?;
    let s1 = cfg.s_index + 1.0;
    let hypothesis_norm = laplacian(&psi_i).sobolev_norm(s1)
        + qu_i.sobolev_norm(s1)
        + v_i.sobolev_norm(s1)
        + t_i.sobolev_norm(s1)
        + sigma_e.sobolev_norm(cfg.s_index)
        + u_e.sobolev_norm(cfg.s_index)
        + t_e.sobolev_norm(cfg.s_index);
    Ok(InitialData {
        potentials: OscPotentials::from_initial_data(&qu_i, &psi_i),
        slow: SlowState::new(v_i, t_i)?,
        state,
        hypothesis_norm,
    })
}

/// Checks the CFL rule on the initial data of every ε.
pub fn check_cfl(cfg: &ExperimentConfig) -> Result<()> {
    for &eps in &cfg.eps_list {
        let data = build_initial_data(cfg, eps)?;
        let nu_bar = data.state.temp.mean();
        let limit = cfl_limit(data.state.sigma.grid(), data.state.u.max_abs(), data.state.temp.map(|x| x - nu_bar).max_abs());
        if cfg.dt > limit {
            return Err(Error::Config(format!(
                "dt = {} violates the CFL rule dt <= min(0.5 dx/|u|, 0.25 dx^2/|T - mean T|) = {limit:.6e} (eps = {eps})",
                cfg.dt
            )));
        }
    }
    Ok(())
}

/// Sup-in-time and `L²`-in-time error norms for one ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub sup_eps_sigma: f64,
    pub sup_u: f64,
    pub sup_t: f64,
    pub sup_gradpsi: f64,
    pub l2t_u: f64,
    pub l2t_t: f64,
    /// `sup ‖u^ε − u_app‖_{H^s}` when the corrector is enabled.
    pub sup_u_app: Option<f64>,
}

pub const METRIC_NAMES: [&str; 6] =
    ["sup_eps_sigma_Hs", "sup_u_Hs", "sup_T_Hs", "sup_gradpsi_Hs", "l2t_u_Hs1", "l2t_T_Hs1"];

impl ErrorMetrics {
    pub fn values(&self) -> [f64; 6] {
        [self.sup_eps_sigma, self.sup_u, self.sup_t, self.sup_gradpsi, self.l2t_u, self.l2t_t]
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub eps: f64,
    pub result: std::result::Result<ErrorMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub metric: String,
    pub slope: f64,
    pub intercept: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub fits: Vec<RateFit>,
}

impl SweepResult {
    pub fn all_pass(&self) -> bool {
        !self.fits.is_empty() && self.fits.iter().all(|f| f.pass)
    }

    pub fn survivors(&self) -> Vec<(f64, ErrorMetrics)> {
        self.rows.iter().filter_map(|r| r.result.as_ref().ok().map(|m| (r.eps, *m))).collect()
    }

    /// Every metric is strictly smallest at the smallest surviving ε.
    pub fn smallest_eps_is_best(&self) -> bool {
        let s = self.survivors();
        let Some((i_min, _)) = s.iter().enumerate().min_by(|a, b| a.1 .0.total_cmp(&b.1 .0)) else {
            return false;
        };
        (0..6).all(|k| s.iter().enumerate().all(|(i, (_, m))| i == i_min || m.values()[k] > s[i_min].1.values()[k]))
    }
}

/// Least-squares fit of `log y = slope·log x + intercept`.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InsufficientFit(x.len().min(y.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Config("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Limit solution sampled on the sweep clock.
#[derive(Debug, Clone)]
pub struct LimitSamples {
    pub times: Vec<f64>,
    pub slow: Vec<SlowState>,
    pub potentials: Vec<OscPotentials>,
}

impl LimitSamples {
    /// Linear interpolation in time, clamped to the sampled range.
    pub fn at(&self, t: f64) -> (SlowState, OscPotentials) {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            return (self.slow[0].clone(), self.potentials[0].clone());
        }
        if t >= self.times[n - 1] {
            return (self.slow[n - 1].clone(), self.potentials[n - 1].clone());
        }
        let i = self.times.partition_point(|&x| x <= t) - 1;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        let mix = |a: &ScalarField, b: &ScalarField| a.scale(1.0 - w).add_scaled(w, b);
        let mixv = |a: &VectorField, b: &VectorField| a.scale(1.0 - w).add_scaled(w, b);
        let (s0, s1) = (&self.slow[i], &self.slow[i + 1]);
        let (p0, p1) = (&self.potentials[i], &self.potentials[i + 1]);
        (
            SlowState { v: mixv(&s0.v, &s1.v), temp: mix(&s0.temp, &s1.temp), pi: mix(&s0.pi, &s1.pi) },
            OscPotentials { q: mix(&p0.q, &p1.q), phi: mix(&p0.phi, &p1.phi) },
        )
    }
}

/// Integrates the coupled limit system and samples it every `stride` steps.
pub fn run_limit(cfg: &ExperimentConfig, slow: &SlowState, p: &OscPotentials) -> Result<LimitSamples> {
    let sc = cfg.stepper();
    let steps = sc.steps()?;
    let mode = LimitMode::Coupled { heating: cfg.heating };
    let mut st = LimitStepper::new(mode, Some(slow), Some(p), cfg.closure, sc)?;
    let mut out = LimitSamples { times: vec![0.0], slow: vec![st.slow_fields()], potentials: vec![p.clone()] };
    for i in 1..=steps {
        st.step()?;
        if i % cfg.stride.max(1) == 0 || i == steps {
            out.times.push(st.time());
            out.slow.push(st.slow_fields());
            out.potentials.push(st.potentials().expect("coupled mode"));
        }
    }
    Ok(out)
}

struct Sample {
    sup: [f64; 4],
    sq_u: f64,
    sq_t: f64,
}

fn sample_errors(state: &CompressibleState, t: f64, slow: &SlowState, p: &OscPotentials, s: f64) -> Sample {
    let eps = state.eps;
    let prof = compose_first_order(t, eps, p);
    let du = state.u.add_scaled(-1.0, &slow.v).add_scaled(-1.0, &prof.u);
    let dt = state.temp.add_scaled(-1.0, &slow.temp);
    let ds = state.sigma.add_scaled(-1.0, &prof.sigma).scale(eps);
    let dgp = spectral::grad(&state.psi).add_scaled(-1.0, &prof.grad_psi);
    Sample {
        sup: [ds.sobolev_norm(s), du.sobolev_norm(s), dt.sobolev_norm(s), dgp.sobolev_norm(s)],
        sq_u: du.sobolev_norm_squared(s + 1.0),
        sq_t: dt.sobolev_norm_squared(s + 1.0),
    }
}

/// Runs the scaled system for one ε against a precomputed limit solution.
pub fn run_single_eps(cfg: &ExperimentConfig, eps: f64, limit: &LimitSamples) -> Result<ErrorMetrics> {
    let data = build_initial_data(cfg, eps)?;
    let sc = cfg.stepper();
    let steps = sc.steps()?;
    let stride = cfg.stride.max(1);
    let s = cfg.s_index;
    let mut st = ScaledStepper::new(&data.state, sc)?;

    let corrector = if cfg.second_order { Some(corrector_for(cfg, eps, limit)?) } else { None };

    let mut sup = [0.0f64; 4];
    let mut sup_app = 0.0f64;
    let (mut int_u, mut int_t) = (0.0, 0.0);
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut j = 0;
    let mut visit = |state: &CompressibleState, t: f64, j: usize| -> Result<()> {
        let smp = sample_errors(state, t, &limit.slow[j], &limit.potentials[j], s);
        for k in 0..4 {
            sup[k] = sup[k].max(smp.sup[k]);
        }
        if let Some((t0, u0, t0v)) = prev {
            int_u += 0.5 * (t - t0) * (u0 + smp.sq_u);
            int_t += 0.5 * (t - t0) * (t0v + smp.sq_t);
        }
        prev = Some((t, smp.sq_u, smp.sq_t));
        if let Some(traj) = &corrector {
            let st2 = &traj[j];
            let prof = compose_first_order(t, eps, &limit.potentials[j]);
            let u_app = limit.slow[j].v.add_scaled(1.0, &prof.u).add_scaled(eps, &st2.u);
            sup_app = sup_app.max(state.u.add_scaled(-1.0, &u_app).sobolev_norm(s));
        }
        Ok(())
    };
    visit(&data.state, 0.0, 0)?;
    for i in 1..=steps {
        st.step()?;
        if i % stride == 0 || i == steps {
            j += 1;
            if (limit.times[j] - st.time()).abs() > 1e-9 {
                return Err(Error::Config("limit samples do not match the sweep clock".into()));
            }
            visit(&st.state(), st.time(), j)?;
        }
    }
    Ok(ErrorMetrics {
        sup_eps_sigma: sup[0],
        sup_u: sup[1],
        sup_t: sup[2],
        sup_gradpsi: sup[3],
        l2t_u: int_u.sqrt(),
        l2t_t: int_t.sqrt(),
        sup_u_app: corrector.map(|_| sup_app),
    })
}

/// Second-order corrector sampled at the limit sample times.
fn corrector_for(
    cfg: &ExperimentConfig,
    eps: f64,
    limit: &LimitSamples,
) -> Result<Vec<crate::dynamics::SecondOrderState>> {
    let grid = cfg.grid()?;
    let sample_dt = cfg.dt * cfg.stride.max(1) as f64;
    let per_sample = (sample_dt / eps / 0.05).ceil().max(1.0) as usize;
    let ds = sample_dt / eps / per_sample as f64;
    let horizon = limit.times[limit.times.len() - 1] / eps;
    let traj = integrate_second_order(
        grid,
        horizon,
        ds,
        per_sample,
        cfg.mean_tol,
        cfg.closure,
        |s| limit.at(eps * s).0,
        |s| compose_first_order(eps * s, eps, &limit.at(eps * s).1),
    )?;
    Ok(traj.states)
}

/// Runs the full ε-sweep and fits rates.
pub fn run_convergence_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate_sweep()?;
    let base = build_initial_data(cfg, cfg.eps_list[0])?;
    let limit = run_limit(cfg, &base.slow, &base.potentials)?;
    let rows: Vec<SweepRow> = cfg
        .eps_list
        .par_iter()
        .map(|&eps| SweepRow { eps, result: run_single_eps(cfg, eps, &limit).map_err(|e| e.to_string()) })
        .collect();
    let survivors: Vec<(f64, ErrorMetrics)> =
        rows.iter().filter_map(|r| r.result.as_ref().ok().map(|m| (r.eps, *m))).collect();
    if survivors.len() < 3 {
        return Ok(SweepResult { rows, fits: Vec::new() });
    }
    let x: Vec<f64> = survivors.iter().map(|(e, _)| *e).collect();
    let mut fits = Vec::new();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let y: Vec<f64> = survivors.iter().map(|(_, m)| m.values()[k]).collect();
        let (slope, intercept) = fit_loglog(&x, &y)?;
        fits.push(RateFit { metric: name.to_string(), slope, intercept, pass: slope >= cfg.slope_min });
    }
    if survivors.iter().all(|(_, m)| m.sup_u_app.is_some()) {
        let y: Vec<f64> = survivors.iter().map(|(_, m)| m.sup_u_app.unwrap_or(f64::NAN)).collect();
        if let Ok((slope, intercept)) = fit_loglog(&x, &y) {
            fits.push(RateFit { metric: "sup_u_app_Hs".into(), slope, intercept, pass: slope >= cfg.slope_min });
        }
    }
    Ok(SweepResult { rows, fits })
}

/// Fast-time average of the rotated oscillatory nonlinearity against the
/// closed-form oscillation right-hand side; returns the `L²` residual of
/// `2·avg − (2∂_t∇q, 2∂_t∇φ)`.
pub fn resonance_average_check(slow: &SlowState, p: &OscPotentials, n_quad: usize) -> f64 {
    resonance_average_check_with(slow, p, n_quad, Closure::Consistent)
}

pub fn resonance_average_check_with(slow: &SlowState, p: &OscPotentials, n_quad: usize, closure: Closure) -> f64 {
    assert!(n_quad >= 16, "n_quad must be at least 16");
    let grid = p.q.grid();
    let SlowState { v, temp, .. } = slow;
    let grad_t = spectral::grad(temp);
    let mut acc_a = ScalarField::zeros(grid);
    let mut acc_b = ScalarField::zeros(grid);
    for m in 0..n_quad {
        let tau = 2.0 * std::f64::consts::PI * m as f64 / n_quad as f64;
        let (sn, cs) = tau.sin_cos();
        let q_tau = p.q.scale(cs).add_scaled(sn, &p.phi);
        let psi_tau = p.phi.scale(cs).add_scaled(-sn, &p.q);
        let u0 = v.add_scaled(1.0, &spectral::grad(&q_tau));
        let sigma0 = laplacian(&psi_tau);
        let i1 = spectral::advect(&u0, &u0)
            .scale(-1.0)
            .add_scaled(1.0, &spectral::div_scaled_tensor(temp, &spectral::strain(&u0)))
            .add_scaled(-1.0, &u0)
            .add_scaled(-1.0, &grad_t);
        let i2 = spectral::scale_by(&u0, &sigma0).scale(-1.0);
        let (a, b) = (gradient_potential(&i1), gradient_potential(&i2));
        // e^{τL} on potentials
        acc_a = acc_a.add_scaled(1.0, &a.scale(cs).add_scaled(-sn, &b));
        acc_b = acc_b.add_scaled(1.0, &b.scale(cs).add_scaled(sn, &a));
    }
    let w = 2.0 / n_quad as f64;
    let (dq, dphi) = rhs_osc_potentials(p, slow, closure);
    let ra = acc_a.scale(w).add_scaled(-2.0, &dq);
    let rb = acc_b.scale(w).add_scaled(-2.0, &dphi);
    PhasePair::from_potentials(&ra, &rb).norm()
}

fn multi_indices(d: usize, max: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<u32>| {
                let used: u32 = prefix.iter().sum();
                (0..=(max as u32 - used)).map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

fn derivative_energy(f: &ScalarField, alpha: &[u32]) -> f64 {
    let grid = f.grid();
    let sum: f64 = f
        .spectrum()
        .iter()
        .enumerate()
        .map(|(flat, c)| {
            let k = grid.wavevector(flat);
            let w: f64 = alpha.iter().enumerate().map(|(j, &a)| (k[j] as f64).powi(2 * a as i32)).product();
            w * c.norm_sqr()
        })
        .sum();
    sum * grid.volume()
}

/// `Σ_{|α| ≤ s} (∫ |εD^ασ|² + |D^αu|² + |D^αT|²)^{1/2}`.
pub fn energy_norm_diag(state: &CompressibleState, s_index: usize) -> f64 {
    let d = state.sigma.grid().dim();
    let e2 = state.eps * state.eps;
    multi_indices(d, s_index)
        .iter()
        .map(|alpha| {
            let mut total = e2 * derivative_energy(&state.sigma, alpha) + derivative_energy(&state.temp, alpha);
            for c in state.u.components() {
                total += derivative_energy(c, alpha);
            }
            total.sqrt()
        })
        .sum()
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_sweep_csv<W: Write>(mut w: W, result: &SweepResult) -> Result<()> {
    writeln!(w, "eps,sup_eps_sigma_Hs,sup_u_Hs,sup_T_Hs,sup_gradpsi_Hs,l2t_u_Hs1,l2t_T_Hs1,status")?;
    for row in &result.rows {
        match &row.result {
            Ok(m) => {
                let vals: Vec<String> = m.values().iter().map(|v| fmt(*v)).collect();
                writeln!(w, "{},{},ok", fmt(row.eps), vals.join(","))?;
            }
            Err(e) => {
                let msg = e.replace([',', '\n'], ";");
                writeln!(w, "{},,,,,,,failed: {msg}", fmt(row.eps))?;
            }
        }
    }
    Ok(())
}

pub fn write_rates_csv<W: Write>(mut w: W, result: &SweepResult) -> Result<()> {
    writeln!(w, "metric,slope,intercept,pass")?;
    for f in &result.fits {
        writeln!(w, "{},{},{},{}", f.metric, fmt(f.slope), fmt(f.intercept), f.pass)?;
    }
    Ok(())
}

pub fn write_diagnostics_header<W: Write>(mut w: W) -> Result<()> {
    writeln!(w, "t,eps,mean_sigma,min_T,Hs_sigma,Hs_u,Hs_T,energy_se")?;
    Ok(())
}

pub fn write_diagnostics_row<W: Write>(mut w: W, d: &Diagnostics) -> Result<()> {
    let vals = [d.t, d.eps, d.mean_sigma, d.min_t, d.hs_sigma, d.hs_u, d.hs_t, d.energy_se];
    let vals: Vec<String> = vals.iter().map(|v| fmt(*v)).collect();
    writeln!(w, "{}", vals.join(","))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small() -> ExperimentConfig {
        ExperimentConfig { n: 32, ..Default::default() }
    }

    #[test]
    fn energy_diag_examples() {
        let g = Grid::new(2, 32).unwrap();
        let mut st = CompressibleState::equilibrium(g, 1.0, 1.0);
        st.temp = ScalarField::zeros(g);
        assert_eq!(energy_norm_diag(&st, 3), 0.0);
        st.sigma = ScalarField::from_fn(g, |x| x[0].sin());
        assert!((energy_norm_diag(&st, 0) - (2.0 * PI * PI).sqrt()).abs() < 1e-12);
        st.eps = 0.5;
        assert!((energy_norm_diag(&st, 0) - 0.5 * (2.0 * PI * PI).sqrt()).abs() < 1e-12);
        // s = 1 adds |∂_1 σ| = |cos| with the same norm and ∂_2 σ = 0
        st.eps = 1.0;
        assert!((energy_norm_diag(&st, 1) - 2.0 * (2.0 * PI * PI).sqrt()).abs() < 1e-12);
        assert_eq!(multi_indices(2, 2).len(), 6);
        assert_eq!(multi_indices(3, 1).len(), 4);
    }

    #[test]
    fn loglog_fit() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powf(1.5)).collect();
        let (s, b) = fit_loglog(&x, &y).unwrap();
        assert!((s - 1.5).abs() < 1e-12 && (b - 3f64.ln()).abs() < 1e-12);
        assert!(matches!(fit_loglog(&x[..2], &y[..2]), Err(Error::InsufficientFit(2))));
    }

    #[test]
    fn initial_data_identities() {
        let cfg = small();
        let eps = 0.05;
        let data = build_initial_data(&cfg, eps).unwrap();
        let sigma_e = random_scalar(cfg.grid().unwrap(), cfg.seed, 4, cfg.band, cfg.amp_sigma_e);
        let psi = spectral::poisson_solve(&data.state.sigma.add_scaled(-eps, &sigma_e)).unwrap();
        let psi_i = random_scalar(cfg.grid().unwrap(), cfg.seed, 2, cfg.band, cfg.amp_psi);
        assert!((&psi - &psi_i).max_abs() < 1e-11);
        assert!(spectral::div(&data.slow.v).l2_norm() < 1e-12);
        assert!(data.hypothesis_norm.is_finite() && data.hypothesis_norm > 0.0);

        let wp = build_initial_data(&cfg.well_prepared(), eps).unwrap();
        assert!(wp.potentials.q.max_abs() == 0.0 && wp.potentials.phi.max_abs() == 0.0);

        let cold = ExperimentConfig { t_mean: 0.4, ..small() };
        assert!(build_initial_data(&cold, eps).is_err());
    }

    #[test]
    fn validation() {
        assert!(small().validate_sweep().is_ok());
        let two = ExperimentConfig { eps_list: vec![0.1, 0.05], ..small() };
        assert!(matches!(two.validate_sweep(), Err(Error::InsufficientFit(2))));
        assert!(ExperimentConfig { eps_list: vec![0.05, 0.1, 0.2], ..small() }.validate().is_err());
        assert!(ExperimentConfig { s_index: 2.0, ..small() }.validate().is_err());
        assert!(check_cfl(&ExperimentConfig { dt: 0.25, tau: 0.5, ..small() }).is_err());
        assert!(check_cfl(&small()).is_ok());
    }

    #[test]
    fn resonance_average_trivial_and_single_mode() {
        let g = Grid::new(2, 32).unwrap();
        let slow = SlowState::rest(g, 1.0);
        assert_eq!(resonance_average_check(&slow, &OscPotentials::zeros(g), 64), 0.0);
        let p = OscPotentials::new(ScalarField::from_fn(g, |x| x[0].sin()), ScalarField::zeros(g)).unwrap();
        assert!(resonance_average_check(&slow, &p, 64) <= 1e-10);
    }

    #[test]
    fn resonance_average_random() {
        let cfg = small();
        let data = build_initial_data(&cfg, 0.1).unwrap();
        let r64 = resonance_average_check(&data.slow, &data.potentials, 64);
        let r32 = resonance_average_check(&data.slow, &data.potentials, 32);
        assert!(r64 <= 1e-8, "{r64}");
        assert!(r64 <= r32.max(1e-12) * 10.0);
        let naive = resonance_average_check_with(&data.slow, &data.potentials, 64, Closure::Naive);
        assert!(naive > 1e-3, "{naive}");
    }

    #[test]
    fn t0_metrics_are_linear_in_perturbations() {
        let cfg = ExperimentConfig { n: 32, tau: 0.002, dt: 0.001, stride: 1, ..Default::default() };
        let base = build_initial_data(&cfg, 0.1).unwrap();
        let limit = run_limit(&cfg, &base.slow, &base.potentials).unwrap();
        let s0 = sample_errors(&base.state, 0.0, &limit.slow[0], &limit.potentials[0], 3.0);
        let doubled = ExperimentConfig { amp_sigma_e: 1.0, amp_u_e: 1.0, amp_t_e: 1.0, ..cfg.clone() };
        let d = build_initial_data(&doubled, 0.1).unwrap();
        let s1 = sample_errors(&d.state, 0.0, &limit.slow[0], &limit.potentials[0], 3.0);
        for k in 0..4 {
            assert!((s1.sup[k] / s0.sup[k] - 2.0).abs() < 1e-9, "metric {k}");
        }
    }

    #[test]
    fn csv_layout() {
        let m = ErrorMetrics {
            sup_eps_sigma: 1.0,
            sup_u: 0.5,
            sup_t: 0.25,
            sup_gradpsi: 0.125,
            l2t_u: 2.0,
            l2t_t: 3.0,
            sup_u_app: None,
        };
        let res = SweepResult {
            rows: vec![SweepRow { eps: 0.1, result: Ok(m) }, SweepRow { eps: 0.05, result: Err("boom, x".into()) }],
            fits: vec![RateFit { metric: "sup_u_Hs".into(), slope: 1.0, intercept: 0.0, pass: true }],
        };
        let mut out = Vec::new();
        write_sweep_csv(&mut out, &res).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "eps,sup_eps_sigma_Hs,sup_u_Hs,sup_T_Hs,sup_gradpsi_Hs,l2t_u_Hs1,l2t_T_Hs1,status");
        assert!(lines[1].starts_with("1.0000000000000001e-1,1.0000000000000000e0,"));
        assert!(lines[1].ends_with(",ok"));
        assert!(lines[2].ends_with("failed: boom; x"));
        let mut out = Vec::new();
        write_rates_csv(&mut out, &res).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().nth(1).unwrap(), "sup_u_Hs,1.0000000000000000e0,0.0000000000000000e0,true");
    }
}
