//! Command-line front end for `lvm-core`.
//!
//! `lvm fit|infer|sample|eval --model KIND ...` reads CSV data, writes JSON
//! model files, per-sample CSV output and one-line JSON metrics. Errors are
//! reported as one-line JSON on standard error with a distinct exit code per
//! error kind (see [`error::CliError::exit_code`]).

pub mod args;
pub mod common;
pub mod data;
pub mod error;
pub mod eval;
pub mod fit;
pub mod infer;
pub mod model_file;
pub mod sample;

use args::Command;
use error::{CliError, Result};

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "LVM_THREADS";

/// Runs one command and returns what belongs on standard output.
pub fn run(command: &Command) -> Result<Vec<u8>> {
    match command {
        Command::Fit(a) => fit::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Sample(a) => sample::run(a),
        Command::Eval(a) => eval::run(a),
    }
}

/// Sizes the global worker pool from [`THREADS_VAR`] when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR}={value:?} is not a positive integer")))?;
    // Fails only if the pool already exists, in which case it stays as built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
