//! scin-sim: experiment driver for the in-network collective simulator.
//!
//! One flat interface, three modes:
//!
//! - **run** (default): `--config fabric.toml --spec scenarios.json` runs a
//!   scenario list (single All-Reduces, size sweeps, wave sweeps, LLM
//!   latency studies) and writes reports and CSVs into the output
//!   directory.
//! - **calibrate**: `--calibrate` runs the bundled prototype reference
//!   points and reports per-point relative error.
//! - every emitted artifact is byte-reproducible given the same config,
//!   spec, and seed.
//!
//! The output directory comes from `--out`, falling back to the
//! `SCIN_SIM_OUT` environment variable, then the working directory. Exit
//! codes: 0 success, 1 correctness or calibration failure, 2 bad
//! configuration or input.

mod calibrate;
mod jobs;
mod llm;

use clap::Parser;
use scin_core::{SimConfig, SimError};
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

const OUT_DIR_ENV: &str = "SCIN_SIM_OUT";
const PROTOTYPE_CONFIG_TOML: &str = include_str!("../configs/prototype.toml");

/// Deterministic cycle-level simulator of switch-offloaded collectives:
/// scenario runner, wave/bandwidth sweeps, LLM latency studies, and
/// prototype calibration.
#[derive(Parser)]
#[command(name = "scin-sim", version)]
struct Args {
    /// Simulator configuration (TOML). Calibration defaults to the bundled
    /// prototype fabric when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Scenario list (JSON array of jobs) to execute.
    #[arg(long)]
    spec: Option<PathBuf>,

    /// Output directory for reports and CSVs (default: $SCIN_SIM_OUT,
    /// then the working directory).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the config's rng_seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Write a fabric event trace here for single-run jobs (with several
    /// such jobs, `.jobN` is appended per job).
    #[arg(long)]
    trace: Option<PathBuf>,

    /// Worker threads for fanning out sweeps (default: available cores).
    #[arg(long)]
    workers: Option<usize>,

    /// Run the prototype calibration points against bundled references
    /// instead of a scenario file.
    #[arg(long)]
    calibrate: bool,
}

/// Errors carrying their process exit code: 1 for correctness failures,
/// 2 for configuration/input problems.
#[derive(Debug)]
pub(crate) struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    pub(crate) fn config(message: impl Into<String>) -> CliError {
        CliError {
            message: message.into(),
            code: 2,
        }
    }

    pub(crate) fn correctness(message: impl Into<String>) -> CliError {
        CliError {
            message: message.into(),
            code: 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> CliError {
        match e {
            SimError::InvalidConfig(_) | SimError::InvalidInput { .. } | SimError::Io { .. } => {
                CliError::config(e.to_string())
            }
            _ => CliError::correctness(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scin-sim: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn run(args: Args) -> Result<(), CliError> {
    let out_dir = args
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::config(format!("{}: {e}", out_dir.display())))?;

    let mut config = match &args.config {
        Some(path) => SimConfig::load_toml(path)?,
        None if args.calibrate => SimConfig::from_toml_str(PROTOTYPE_CONFIG_TOML)?,
        None => return Err(CliError::config("--config is required (see --help)")),
    };
    if let Some(seed) = args.seed {
        config.rng_seed = seed;
    }

    if args.calibrate {
        return match calibrate::run(&config, &out_dir)? {
            true => Ok(()),
            false => Err(CliError::correctness(
                "calibration points outside tolerance",
            )),
        };
    }

    let spec = args
        .spec
        .as_ref()
        .ok_or_else(|| CliError::config("--spec is required (see --help)"))?;
    let jobs = jobs::load_jobs(spec)?;
    let workers = args.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let total = jobs::run_jobs(&jobs, &config, &out_dir, args.trace.as_deref(), workers)?;
    println!(
        "{total} simulation{} complete -> {}",
        if total == 1 { "" } else { "s" },
        out_dir.display(),
    );
    Ok(())
}
