//! `kpo`: run the KPO transducer experiments from a TOML config.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use kpo_core::{KpoError, Result};

use crate::config::{Overrides, RunConfig};
use crate::output::{error_kind, exit_code, ErrorReport, OutputDir, Summary};

#[derive(Debug, Parser)]
#[command(name = "kpo", version, about = "Kerr parametric oscillator transducer simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; omitted tables take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for the trajectory streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Fock-space truncation.
    #[arg(long = "fock-dim", global = true, value_name = "N")]
    fock_dim: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Steady-state observables over the detuning grid.
    Steady,
    /// Liouvillian gap over the (θ, Δ) grid.
    Gap,
    /// Deterministic detuning sweep(s).
    Sweep,
    /// Heterodyne measurement records.
    Trajectory,
    /// Calibration plus the full multi-shot estimation protocol.
    Transduce,
    /// Steady-state quantum Fisher information over Δ and temperature.
    Qfi,
    /// Husimi Q function of a steady state.
    Husimi,
    /// Δ*(F) calibration table.
    Calibrate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Steady => "steady",
            Command::Gap => "gap",
            Command::Sweep => "sweep",
            Command::Trajectory => "trajectory",
            Command::Transduce => "transduce",
            Command::Qfi => "qfi",
            Command::Husimi => "husimi",
            Command::Calibrate => "calibrate",
        }
    }
}

fn run(cli: &Cli, out: &mut OutputDir) -> Result<()> {
    let overrides = Overrides { seed: cli.seed, fock_dim: cli.fock_dim, threads: cli.threads };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| KpoError::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let start = Instant::now();
    let outcome = match cli.command {
        Command::Steady => commands::steady(&cfg, out),
        Command::Gap => commands::gap(&cfg, out),
        Command::Sweep => commands::sweep(&cfg, out),
        Command::Trajectory => commands::trajectory(&cfg, out),
        Command::Transduce => commands::transduce(&cfg, out),
        Command::Qfi => commands::qfi(&cfg, out),
        Command::Husimi => commands::husimi(&cfg, out),
        Command::Calibrate => commands::calibrate_cmd(&cfg, out),
    }?;
    let name = cli.command.name();
    let summary = Summary {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        convergence: outcome.convergence,
        results: outcome.results,
        files: out.written().to_vec(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    out.write_json(&format!("{name}.json"), &summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = cli.command.name();
    let result = OutputDir::create(&cli.out).and_then(|mut out| {
        let r = run(&cli, &mut out);
        if r.is_ok() {
            out.remove_stale("error.json")?;
        }
        if let Err(e) = &r {
            let report =
                ErrorReport { command: name, exit_code: exit_code(e), kind: error_kind(e), message: e.to_string() };
            if let Err(w) = out.write_json("error.json", &report) {
                log::error!("could not write error.json: {w}");
            }
        }
        r
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kpo {name}: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
