//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment, dotted keys group related
//! settings. Unknown or repeated keys are rejected. [`RunConfig::render`]
//! writes every key with its resolved value, so a rendered file parses back
//! to the same resolved configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use zmlim::dynamics::Closure;
use zmlim::harness::ExperimentConfig;
use zmlim::integrate::{Physics, Scheme, StepperConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Random,
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// ε for the single-system runs; defaults to the first entry of the ε list.
    pub run_eps: Option<f64>,
    pub data: DataKind,
    pub physics: Physics,
    /// Write snapshots every this many diagnostic samples; 0 writes only the
    /// first and last sample.
    pub snapshot_every: usize,
    pub avg_nodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: ExperimentConfig::default(),
            run_eps: None,
            data: DataKind::Random,
            physics: Physics::default(),
            snapshot_every: 0,
            avg_nodes: 64,
        }
    }
}

impl RunConfig {
    pub fn eps(&self) -> f64 {
        self.run_eps.or_else(|| self.experiment.eps_list.first().copied()).unwrap_or(f64::NAN)
    }

    pub fn stepper(&self) -> StepperConfig {
        StepperConfig { physics: self.physics, ..self.experiment.stepper() }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), lineno + 1) {
                return Err(format!("line {}: key `{key}` already set on line {prev}", lineno + 1));
            }
            cfg.set(key, value).map_err(|e| format!("line {}: {e}", lineno + 1))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let e = &mut self.experiment;
        match key {
            "grid.dim" => e.dim = parse(key, value)?,
            "grid.n" => e.n = parse(key, value)?,
            "norm.s" => e.s_index = parse(key, value)?,
            "eps.list" => e.eps_list = parse_list(key, value)?,
            "eps.run" => self.run_eps = Some(parse(key, value)?),
            "data.kind" => {
                self.data = match value {
                    "random" => DataKind::Random,
                    "equilibrium" => DataKind::Equilibrium,
                    _ => return Err(format!("{key}: expected `random` or `equilibrium`, got {value:?}")),
                }
            }
            "data.seed" => e.seed = parse(key, value)?,
            "data.band" => e.band = parse(key, value)?,
            "data.amp_v" => e.amp_v = parse(key, value)?,
            "data.amp_qu" => e.amp_qu = parse(key, value)?,
            "data.amp_psi" => e.amp_psi = parse(key, value)?,
            "data.t_mean" => e.t_mean = parse(key, value)?,
            "data.amp_t" => e.amp_t = parse(key, value)?,
            "data.amp_sigma_e" => e.amp_sigma_e = parse(key, value)?,
            "data.amp_u_e" => e.amp_u_e = parse(key, value)?,
            "data.amp_t_e" => e.amp_t_e = parse(key, value)?,
            "model.t_l" => e.t_l = parse(key, value)?,
            "model.t0" => e.t0 = parse(key, value)?,
            "model.closure" => {
                e.closure = match value {
                    "consistent" => Closure::Consistent,
                    "naive" => Closure::Naive,
                    _ => return Err(format!("{key}: expected `consistent` or `naive`, got {value:?}")),
                }
            }
            "model.heating" => e.heating = parse_bool(key, value)?,
            "stepper.tau" => e.tau = parse(key, value)?,
            "stepper.dt" => e.dt = parse(key, value)?,
            "stepper.stride" => e.stride = parse(key, value)?,
            "stepper.scheme" => {
                e.scheme = match value {
                    "rk2" => Scheme::IfRk2,
                    "rk4" => Scheme::IfRk4,
                    _ => return Err(format!("{key}: expected `rk2` or `rk4`, got {value:?}")),
                }
            }
            "stepper.nonlinear" => self.physics.nonlinear = parse_bool(key, value)?,
            "stepper.diffusion" => self.physics.diffusion = parse_bool(key, value)?,
            "stepper.damping" => self.physics.damping = parse_bool(key, value)?,
            "limits.mean_tol" => e.mean_tol = parse(key, value)?,
            "limits.rho_floor" => e.rho_floor = parse(key, value)?,
            "limits.t_floor" => e.t_floor = parse(key, value)?,
            "sweep.slope_min" => e.slope_min = parse(key, value)?,
            "sweep.second_order" => e.second_order = parse_bool(key, value)?,
            "avg.nodes" => self.avg_nodes = parse(key, value)?,
            "output.snapshot_every" => self.snapshot_every = parse(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its resolved value, in parseable form.
    pub fn render(&self) -> String {
        let e = &self.experiment;
        let list: Vec<String> = e.eps_list.iter().map(|x| x.to_string()).collect();
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("grid.dim", e.dim.to_string());
        put("grid.n", e.n.to_string());
        put("norm.s", e.s_index.to_string());
        put("eps.list", list.join(", "));
        put("eps.run", self.eps().to_string());
        put("data.kind", match self.data {
            DataKind::Random => "random".into(),
            DataKind::Equilibrium => "equilibrium".into(),
        });
        put("data.seed", e.seed.to_string());
        put("data.band", e.band.to_string());
        put("data.amp_v", e.amp_v.to_string());
        put("data.amp_qu", e.amp_qu.to_string());
        put("data.amp_psi", e.amp_psi.to_string());
        put("data.t_mean", e.t_mean.to_string());
        put("data.amp_t", e.amp_t.to_string());
        put("data.amp_sigma_e", e.amp_sigma_e.to_string());
        put("data.amp_u_e", e.amp_u_e.to_string());
        put("data.amp_t_e", e.amp_t_e.to_string());
        put("model.t_l", e.t_l.to_string());
        put("model.t0", e.t0.to_string());
        put("model.closure", match e.closure {
            Closure::Consistent => "consistent".into(),
            Closure::Naive => "naive".into(),
        });
        put("model.heating", e.heating.to_string());
        put("stepper.tau", e.tau.to_string());
        put("stepper.dt", e.dt.to_string());
        put("stepper.stride", e.stride.to_string());
        put("stepper.scheme", match e.scheme {
            Scheme::IfRk2 => "rk2".into(),
            Scheme::IfRk4 => "rk4".into(),
        });
        put("stepper.nonlinear", self.physics.nonlinear.to_string());
        put("stepper.diffusion", self.physics.diffusion.to_string());
        put("stepper.damping", self.physics.damping.to_string());
        put("limits.mean_tol", e.mean_tol.to_string());
        put("limits.rho_floor", e.rho_floor.to_string());
        put("limits.t_floor", e.t_floor.to_string());
        put("sweep.slope_min", e.slope_min.to_string());
        put("sweep.second_order", e.second_order.to_string());
        put("avg.nodes", self.avg_nodes.to_string());
        put("output.snapshot_every", self.snapshot_every.to_string());
        out
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key}: expected `true` or `false`, got {value:?}")),
    }
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, String> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}
