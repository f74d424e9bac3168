//! `zmlim` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Failure;
use crate::config::{parse_list, RunConfig};

#[derive(Parser)]
#[command(name = "zmlim", version, about = "Zero-electron-mass limit solvers and convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scaled compressible system for `eps.run`.
    RunScaled(Common),
    /// Integrate the incompressible limit system.
    RunLimit(Common),
    /// Integrate the oscillation potentials together with the limit system.
    RunOsc(Common),
    /// Run the eps-sweep and fit convergence rates.
    Sweep(Common),
    /// Compare the fast-time average against the closed-form oscillation equations.
    AvgCheck(Common),
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "zmlim-out")]
    out: PathBuf,
    /// Overrides `data.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `eps.list`, e.g. "0.1,0.05,0.025".
    #[arg(long, value_name = "LIST")]
    eps_list: Option<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(&self.config)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", self.config.display())))?;
        let mut cfg = RunConfig::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", self.config.display())))?;
        if let Some(seed) = self.seed {
            cfg.experiment.seed = seed;
        }
        if let Some(list) = &self.eps_list {
            cfg.experiment.eps_list = parse_list("--eps-list", list).map_err(Failure::Config)?;
        }
        Ok(cfg)
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("ZMLIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("ZMLIM_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let (common, cmd): (&Common, fn(&RunConfig, &std::path::Path) -> Result<(), Failure>) = match &cli.command {
        Command::RunScaled(c) => (c, commands::run_scaled),
        Command::RunLimit(c) => (c, commands::run_limit),
        Command::RunOsc(c) => (c, commands::run_osc),
        Command::Sweep(c) => (c, commands::sweep),
        Command::AvgCheck(c) => (c, commands::avg_check),
    };
    let cfg = common.load()?;
    cmd(&cfg, &common.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("zmlim: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
