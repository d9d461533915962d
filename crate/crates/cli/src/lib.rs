//! Driver for the epnozzle solvers: configuration, run orchestration,
//! deterministic output and two-resolution verification.

pub mod config;
pub mod output;
pub mod run;
pub mod verify;

use thiserror::Error;

pub use config::RunConfig;

/// Solver pipeline selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Background,
    Potential3d,
    Axisym,
    Verify,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Background => "background",
            Mode::Potential3d => "potential3d",
            Mode::Axisym => "axisym",
            Mode::Verify => "verify",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Mode::Background, Mode::Potential3d, Mode::Axisym, Mode::Verify].into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Solver(#[from] epnozzle_core::Error),
    #[error("missing run: {0}")]
    MissingRun(String),
    #[error("degenerate comparison: {0}")]
    DegenerateComparison(String),
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Solver(e) => e.exit_code(),
            CliError::MissingRun(_) => 30,
            CliError::DegenerateComparison(_) => 31,
            CliError::VerificationFailed(_) => 32,
        }
    }

    /// Short machine-readable name used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Solver(e) => e.kind(),
            CliError::MissingRun(_) => "missing_run",
            CliError::DegenerateComparison(_) => "degenerate_comparison",
            CliError::VerificationFailed(_) => "verification_failed",
        }
    }
}
