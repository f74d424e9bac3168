use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use zmlim::dynamics::{CompressibleState, OscPotentials, SlowState};
use zmlim::harness::{
    build_initial_data, check_cfl, resonance_average_check_with, run_convergence_sweep, write_diagnostics_header,
    write_diagnostics_row, write_rates_csv, write_sweep_csv,
};
use zmlim::integrate::{cfl_limit, Diagnostics, LimitMode, LimitStepper, ScaledStepper};
use zmlim::snapshot::write_snapshot;
use zmlim::spectral::{div, grad, SobolevNorm};
use zmlim::{Error, ScalarField};

use crate::config::{DataKind, RunConfig};

pub const RESONANCE_TOL: f64 = 1e-8;

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, CFL violation or I/O problem.
    Config(String),
    /// Floor, mean or finiteness abort during integration.
    Abort(String),
    /// The computation finished but its check did not pass.
    Check(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Abort(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Abort(m) | Failure::Check(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_abort() {
            Failure::Abort(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("io: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Run directory with its manifest.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root` and writes `manifest.txt` before any computation.
    pub fn create(root: &Path, command: &str, cfg: &RunConfig, outputs: &[&str]) -> Result<Self, Failure> {
        fs::create_dir_all(root)?;
        let mut m = BufWriter::new(File::create(root.join("manifest.txt"))?);
        writeln!(m, "# zmlim run manifest; re-run with `zmlim {command} --config manifest.txt`")?;
        writeln!(m, "# version = {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(m, "# command = {command}")?;
        writeln!(m, "# started_unix = {:.3}", unix_now())?;
        writeln!(m, "# outputs = {}", outputs.join(", "))?;
        write!(m, "{}", cfg.render())?;
        m.flush()?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(File::create(path)?))
    }

    fn finish(&self) -> Outcome {
        let mut m = fs::OpenOptions::new().append(true).open(self.root.join("manifest.txt"))?;
        writeln!(m, "# finished_unix = {:.3}", unix_now())?;
        Ok(())
    }
}

struct Start {
    state: CompressibleState,
    slow: SlowState,
    potentials: OscPotentials,
}

fn initial_data(cfg: &RunConfig, eps: f64) -> Result<Start, Failure> {
    let e = &cfg.experiment;
    match cfg.data {
        DataKind::Random => {
            let d = build_initial_data(e, eps)?;
            Ok(Start { state: d.state, slow: d.slow, potentials: d.potentials })
        }
        DataKind::Equilibrium => {
            if e.t0 < e.t_l {
                return Err(Failure::Config(format!("initial temperature {} is below T_L = {}", e.t0, e.t_l)));
            }
            let grid = e.grid()?;
            Ok(Start {
                state: CompressibleState::equilibrium(grid, eps, e.t0),
                slow: SlowState::rest(grid, e.t0),
                potentials: OscPotentials::zeros(grid),
            })
        }
    }
}

/// Structural checks, then the CFL rule on the initial data of `eps`.
fn preflight(cfg: &RunConfig) -> Result<Start, Failure> {
    let eps = cfg.eps();
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Failure::Config(format!("eps.run = {eps} must lie in (0, 1)")));
    }
    cfg.experiment.grid()?;
    let start = initial_data(cfg, eps)?;
    let s = &start.state;
    let nu_bar = s.temp.mean();
    let limit = cfl_limit(s.sigma.grid(), s.u.max_abs(), s.temp.map(|x| x - nu_bar).max_abs());
    if cfg.experiment.dt > limit {
        return Err(Failure::Config(format!(
            "dt = {} violates the CFL rule dt <= min(0.5 dx/|u|, 0.25 dx^2/|T - mean T|) = {limit:.6e}",
            cfg.experiment.dt
        )));
    }
    cfg.experiment.validate()?;
    Ok(start)
}

fn snapshot_due(cfg: &RunConfig, sample: usize, last: bool) -> bool {
    match cfg.snapshot_every {
        0 => sample == 0 || last,
        k => sample % k == 0 || last,
    }
}

fn snapshots(dir: &RunDir, sample: usize, t: f64, fields: &[(String, &ScalarField)]) -> Outcome {
    for (name, f) in fields {
        let mut w = dir.file(&format!("snapshots/{name}_{sample:05}.bin"))?;
        write_snapshot(&mut w, name, t, f)?;
        w.flush()?;
    }
    Ok(())
}

fn vector_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

/// Calls `sample(index, last)` at step 0, every `stride` steps and the final step.
fn drive(
    steps: usize,
    stride: usize,
    mut advance: impl FnMut() -> zmlim::Result<()>,
    mut sample: impl FnMut(usize, bool) -> Outcome,
) -> Outcome {
    let stride = stride.max(1);
    sample(0, steps == 0)?;
    let mut k = 0;
    for i in 1..=steps {
        advance()?;
        if i % stride == 0 || i == steps {
            k += 1;
            sample(k, i == steps)?;
        }
    }
    Ok(())
}

pub fn run_scaled(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = RunDir::create(out, "run-scaled", cfg, &["diagnostics.csv", "snapshots/"])?;
    let start = preflight(cfg)?;
    let sc = cfg.stepper();
    let steps = sc.steps()?;
    let s_index = cfg.experiment.s_index;
    let mut diag = dir.file("diagnostics.csv")?;
    write_diagnostics_header(&mut diag)?;
    let stepper = std::cell::RefCell::new(ScaledStepper::new(&start.state, sc)?);
    let result = drive(
        steps,
        sc.snapshot_stride,
        || stepper.borrow_mut().step(),
        |k, last| {
            let st = stepper.borrow();
            let (t, s) = (st.time(), st.state());
            write_diagnostics_row(&mut diag, &Diagnostics::of(t, &s, s_index))?;
            if snapshot_due(cfg, k, last) {
                let names = vector_names("u", s.u.dim());
                let mut fields = vec![("sigma".to_string(), &s.sigma)];
                fields.extend(names.into_iter().zip(s.u.components()));
                fields.push(("T".into(), &s.temp));
                fields.push(("psi".into(), &s.psi));
                snapshots(&dir, k, t, &fields)?;
            }
            Ok(())
        },
    );
    diag.flush()?;
    result?;
    dir.finish()
}

pub fn run_limit(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = RunDir::create(out, "run-limit", cfg, &["diagnostics.csv", "snapshots/"])?;
    let start = preflight(cfg)?;
    let sc = cfg.stepper();
    let steps = sc.steps()?;
    let s_index = cfg.experiment.s_index;
    let mut diag = dir.file("diagnostics.csv")?;
    writeln!(diag, "t,Hs_v,Hs_T,min_T,max_div_v")?;
    let stepper = std::cell::RefCell::new(LimitStepper::new(
        LimitMode::Slow,
        Some(&start.slow),
        None,
        cfg.experiment.closure,
        sc,
    )?);
    let result = drive(
        steps,
        sc.snapshot_stride,
        || stepper.borrow_mut().step(),
        |k, last| {
            let st = stepper.borrow();
            let t = st.time();
            let s = st.slow_fields();
            let row = [t, s.v.sobolev_norm(s_index), s.temp.sobolev_norm(s_index), s.temp.min(), div(&s.v).max_abs()];
            writeln!(diag, "{}", csv_row(&row))?;
            if snapshot_due(cfg, k, last) {
                let s = st.slow();
                let names = vector_names("v", s.v.dim());
                let mut fields: Vec<(String, &ScalarField)> = names.into_iter().zip(s.v.components()).collect();
                fields.push(("T".into(), &s.temp));
                fields.push(("pi".into(), &s.pi));
                snapshots(&dir, k, t, &fields)?;
            }
            Ok(())
        },
    );
    diag.flush()?;
    result?;
    dir.finish()
}

pub fn run_osc(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = RunDir::create(out, "run-osc", cfg, &["diagnostics.csv", "snapshots/"])?;
    let start = preflight(cfg)?;
    let sc = cfg.stepper();
    let steps = sc.steps()?;
    let s_index = cfg.experiment.s_index;
    let mut diag = dir.file("diagnostics.csv")?;
    writeln!(diag, "t,Hs_grad_q,Hs_grad_phi,Hs_v,min_T")?;
    let mode = LimitMode::Coupled { heating: cfg.experiment.heating };
    let stepper = std::cell::RefCell::new(LimitStepper::new(
        mode,
        Some(&start.slow),
        Some(&start.potentials),
        cfg.experiment.closure,
        sc,
    )?);
    let result = drive(
        steps,
        sc.snapshot_stride,
        || stepper.borrow_mut().step(),
        |k, last| {
            let st = stepper.borrow();
            let t = st.time();
            let s = st.slow_fields();
            let p = st.potentials().expect("coupled mode carries potentials");
            let row = [
                t,
                grad(&p.q).sobolev_norm(s_index),
                grad(&p.phi).sobolev_norm(s_index),
                s.v.sobolev_norm(s_index),
                s.temp.min(),
            ];
            writeln!(diag, "{}", csv_row(&row))?;
            if snapshot_due(cfg, k, last) {
                snapshots(&dir, k, t, &[("q".into(), &p.q), ("phi".into(), &p.phi)])?;
            }
            Ok(())
        },
    );
    diag.flush()?;
    result?;
    dir.finish()
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = RunDir::create(out, "sweep", cfg, &["sweep.csv", "rates.csv"])?;
    let e = &cfg.experiment;
    e.validate_sweep()?;
    check_cfl(e)?;
    let result = run_convergence_sweep(e)?;
    let mut w = dir.file("sweep.csv")?;
    write_sweep_csv(&mut w, &result)?;
    w.flush()?;
    let mut w = dir.file("rates.csv")?;
    write_rates_csv(&mut w, &result)?;
    w.flush()?;
    dir.finish()?;

    for f in &result.fits {
        println!("{:<16} slope {:>8.4}  {}", f.metric, f.slope, if f.pass { "pass" } else { "FAIL" });
    }
    let failed: Vec<String> =
        result.rows.iter().filter_map(|r| r.result.as_ref().err().map(|m| format!("eps={}: {m}", r.eps))).collect();
    if !failed.is_empty() {
        return Err(Failure::Abort(format!("runs aborted: {}", failed.join("; "))));
    }
    if !result.all_pass() {
        return Err(Failure::Check(format!("some fitted slopes are below {}", e.slope_min)));
    }
    Ok(())
}

pub fn avg_check(cfg: &RunConfig, out: &Path) -> Outcome {
    let dir = RunDir::create(out, "avg-check", cfg, &["avg_check.txt"])?;
    if cfg.avg_nodes < 16 {
        return Err(Failure::Config(format!("avg.nodes = {} must be at least 16", cfg.avg_nodes)));
    }
    cfg.experiment.validate()?;
    let start = initial_data(cfg, cfg.eps())?;
    let residual = resonance_average_check_with(&start.slow, &start.potentials, cfg.avg_nodes, cfg.experiment.closure);
    let mut w = dir.file("avg_check.txt")?;
    writeln!(w, "residual = {residual:.16e}")?;
    writeln!(w, "nodes = {}", cfg.avg_nodes)?;
    w.flush()?;
    dir.finish()?;
    println!("residual {residual:.6e}");
    if residual <= RESONANCE_TOL {
        Ok(())
    } else {
        Err(Failure::Check(format!("residual {residual:.6e} exceeds {RESONANCE_TOL:e}")))
    }
}

fn csv_row(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",")
}
