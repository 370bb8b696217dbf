//! Config-driven runner for torsionlab simulations and analyses.
//!
//! Exit status: 0 success, 2 invalid config (nothing written), 3 numerical
//! failure (non-convergence, instability; a failure marker is written to the
//! output directory), 1 I/O failure. Errors go to stderr as JSON.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use torsionlab::Execution;

use crate::commands::Ctx;
use crate::config::{parse_band, Need, Overrides};
use crate::error::CliError;
use crate::output::{write_failure_marker, Meta};

#[derive(Debug, Parser)]
#[command(name = "torsionlab", version, about = "Feedback-cooled torsion pendulum toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    config: PathBuf,
    /// Analysis band override, Hz.
    #[arg(long, value_name = "F1,F2", value_parser = parse_band)]
    band: Option<[f64; 2]>,
    /// Seed override.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-loop time series and Welch spectrum.
    Simulate(Common),
    /// Effective temperature and noise-budget fit.
    Analyze(Common),
    /// Coherence angle and length of the cooled mode.
    Coherence(Common),
    /// Figure-of-merit table.
    Fom {
        #[command(flatten)]
        common: Common,
        /// Platform table, relative to the config file.
        #[arg(long, value_name = "PATH")]
        table: Option<PathBuf>,
    },
    /// Optical-lever detector-plane scan.
    Beam(Common),
    /// Geometry factors with brute-force cross-checks.
    Geometry(Common),
    /// All of the above plus reference checks.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        table: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Analyze(_) => "analyze",
            Command::Coherence(_) => "coherence",
            Command::Fom { .. } => "fom",
            Command::Beam(_) => "beam",
            Command::Geometry(_) => "geometry",
            Command::Report { .. } => "report",
        }
    }

    fn parts(&self) -> (&Common, Option<&PathBuf>, Need) {
        match self {
            Command::Fom { common, table } => (common, table.as_ref(), Need { platforms: true, optics: false }),
            Command::Report { common, table } => (common, table.as_ref(), Need::default()),
            Command::Beam(c) => (c, None, Need { platforms: false, optics: true }),
            Command::Simulate(c) | Command::Analyze(c) | Command::Coherence(c) | Command::Geometry(c) => {
                (c, None, Need::default())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let (common, table, need) = cli.command.parts();
    let ov = Overrides {
        seed: common.seed,
        band: common.band,
        table: table.cloned(),
    };
    let v = match config::load(&common.config, &ov, need) {
        Ok(v) => v,
        Err(e) => return fail(name, e, None),
    };
    let out_dir = v.out_dir.clone();
    let ctx = Ctx {
        meta: Meta::new(name, &v.config),
        v,
        exec: Execution::default(),
    };
    let result = match &cli.command {
        Command::Simulate(_) => commands::simulate(&ctx),
        Command::Analyze(_) => commands::analyze(&ctx),
        Command::Coherence(_) => commands::coherence(&ctx),
        Command::Fom { .. } => commands::fom(&ctx),
        Command::Beam(_) => commands::beam(&ctx),
        Command::Geometry(_) => commands::geometry(&ctx),
        Command::Report { .. } => commands::report(&ctx),
    }
    .and_then(|a| a.write_all(&out_dir));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(name, e, Some((&out_dir, &ctx.meta))),
    }
}

fn fail(name: &str, e: CliError, marker: Option<(&PathBuf, &Meta)>) -> ExitCode {
    let mut body = e.to_json(name);
    eprintln!("{body}");
    if let (Some((dir, meta)), false) = (marker, matches!(e, CliError::Config(_))) {
        body["meta"] = serde_json::to_value(meta).unwrap_or_default();
        write_failure_marker(dir, &body);
    }
    ExitCode::from(e.exit_code() as u8)
}
