//! Config-driven runner for the dphase solvers.
//!
//! `dphase <mode> --config <path>` runs one of `solve-one-p`, `continue`,
//! `verify` or `oracle-check` and writes `report.json`, `steps.csv` and
//! `solution.vtk` into the output directory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;
pub mod vtk;

use std::path::PathBuf;

use clap::Parser;

use crate::config::{parse_config, ConfigError, Mode};
use crate::run::{run_command, write_error_record, RunError, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "dphase", version, about = "Double-phase Neumann problems: solve, continue p -> 1, verify")]
pub struct Cli {
    /// What to run.
    #[arg(value_enum)]
    pub mode: Mode,
    /// Run configuration (`section.key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `run.output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for probes, multi-start searches and perturbations.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Treat hypothesis violations as errors.
    #[arg(long)]
    pub strict: bool,
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let mut config = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            let err = RunError::Config(e);
            eprintln!("error: {err}");
            if let Some(out) = &cli.out {
                let _ = write_error_record(out, &err, None);
            }
            return err.exit_code();
        }
    };
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.strict |= cli.strict;
    if let Some(mode) = config.mode {
        if mode != cli.mode {
            let err = RunError::Config(ConfigError::Conflict(format!(
                "command line selects `{}` but run.mode is `{mode}`",
                cli.mode
            )));
            eprintln!("error: {err}");
            let _ = write_error_record(&config.output, &err, None);
            return err.exit_code();
        }
    }
    match run_command(&config, cli.mode) {
        Ok(outcome) => {
            println!("{}", outcome.summary.trim_end());
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(err) => {
            eprintln!("error [{}]: {err}", err.kind());
            err.exit_code()
        }
    }
}
