//! `marcus-wz`: config-driven runs of the Wong-Zakai scheme.
//!
//! Exit codes: 0 ok, 1 other failure, 2 config error, 3 failed check or
//! assertion, 4 divergence abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use commands::{Run, Status};

#[derive(Parser)]
#[command(name = "marcus-wz", version, about = "Wong-Zakai approximation of Levy-driven Marcus SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per core). Never changes results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Exponential-moment and short-time moment checks of the jump law.
    LevyCheck(Common),
    /// One path: scheme knots and, if configured, the reference.
    Simulate(Common),
    /// Strong error over the step ladder and its rate.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Fail with exit code 3 unless the fitted slope lies in [LO, HI].
        #[arg(long, value_name = "LO,HI", value_parser = parse_band)]
        assert_slope: Option<(f64, f64)>,
    },
    /// Uniform-in-x strong error over a lattice in a ball.
    Uniform {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "LO,HI", value_parser = parse_band)]
        assert_slope: Option<(f64, f64)>,
    },
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("LO: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("HI: {e}"))?;
    if lo > hi {
        return Err("LO must not exceed HI".into());
    }
    Ok((lo, hi))
}

fn run(cli: Cli) -> Result<Status> {
    let (name, common, band) = match &cli.command {
        Command::LevyCheck(c) => ("levy-check", c, None),
        Command::Simulate(c) => ("simulate", c, None),
        Command::Converge { common, assert_slope } => ("converge", common, *assert_slope),
        Command::Uniform { common, assert_slope } => ("uniform", common, *assert_slope),
    };
    let mut run = Run::prepare(name, &common.config, common.seed, common.threads, &common.out)?;
    let status = match cli.command {
        Command::LevyCheck(_) => commands::levy_check(&mut run)?,
        Command::Simulate(_) => commands::simulate(&mut run)?,
        Command::Converge { .. } => commands::converge(&mut run, band)?,
        Command::Uniform { .. } => commands::uniform(&mut run, band)?,
    };
    run.finish()?;
    Ok(status)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<marcus_wz::Error>() {
        Some(marcus_wz::Error::Config { .. }) => 2,
        Some(marcus_wz::Error::DivergenceAbort { .. }) => 4,
        Some(e) if e.is_divergence() => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Passed) => ExitCode::SUCCESS,
        Ok(Status::Failed(reason)) => {
            eprintln!("check failed: {reason}");
            ExitCode::from(3)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
