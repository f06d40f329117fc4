#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "ma-min", version, about = "Boundary-controlled Monge-Ampere minimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; built-in defaults when omitted
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PogorelovArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Dimension (at least 3)
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Integration range of the profile ODE
    #[arg(long)]
    tmax: Option<f64>,
    /// Steepness of the truncating profile
    #[arg(long = "K")]
    k: Option<f64>,
    /// Weight of the v-bar comparison function
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the 2D crease criterion on the configured data
    CheckStability(ConfigArg),
    /// Minimize L over admissible boundary data
    Solve(ConfigArg),
    /// Solve, then run the boundary diagnostics against the configured thresholds
    Verify(ConfigArg),
    /// Distances of minimizers along a perturbed data sequence to the limit
    Compactness(ConfigArg),
    /// Check the explicit singular minimizer in dimension n >= 3
    Pogorelov(PogorelovArgs),
    /// Minimize the energy functional by alternating f-updates and descent steps
    Energy(ConfigArg),
}

/// Finished run: 0 converged, 2 completed without converging or with failed checks.
pub enum Outcome {
    Done,
    Incomplete,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::CheckStability(a) => commands::check_stability(&RunConfig::load(a.config.as_deref())?),
        Command::Solve(a) => commands::solve(&RunConfig::load(a.config.as_deref())?),
        Command::Verify(a) => commands::verify(&RunConfig::load(a.config.as_deref())?),
        Command::Compactness(a) => commands::compactness(&RunConfig::load(a.config.as_deref())?),
        Command::Pogorelov(a) => {
            let mut cfg = RunConfig::load(a.cfg.config.as_deref())?;
            let p = &mut cfg.pogorelov;
            p.n = a.n.unwrap_or(p.n);
            p.gamma = a.gamma.unwrap_or(p.gamma);
            p.tmax = a.tmax.unwrap_or(p.tmax);
            p.k = a.k.unwrap_or(p.k);
            p.delta = a.delta.unwrap_or(p.delta);
            cfg.validate()?;
            commands::pogorelov(&cfg)
        }
        Command::Energy(a) => commands::energy(&RunConfig::load(a.config.as_deref())?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Incomplete) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
