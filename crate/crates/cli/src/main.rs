use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use epnozzle_cli::{run, CliError, Mode, RunConfig};

/// Steady supersonic Euler-Poisson nozzle solver.
#[derive(Debug, Parser)]
#[command(name = "epnozzle", version)]
struct Args {
    /// Pipeline to run.
    #[arg(value_enum)]
    mode: Mode,
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Re-solve at the refined resolution after the run and rate the residuals.
    #[arg(long)]
    verify: bool,
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("EPNOZZLE_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("EPNOZZLE_THREADS = '{v}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = threads()
        .and_then(|_| RunConfig::read(&args.config))
        .and_then(|cfg| run::execute(args.mode, &cfg, &args.out, args.verify));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("epnozzle: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
