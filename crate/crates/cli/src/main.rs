//! `nc-workbench`: dataset generation, training, evaluation, sampling and
//! embedding dumps for mask-conditioned generators.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("NC_WORKBENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("NC_WORKBENCH_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
