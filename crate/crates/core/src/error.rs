//! Error type shared by every solver module.

use std::fmt;

use thiserror::Error;

/// Grid location attached to failures that happen at a specific point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Location {
    pub r: f64,
    pub theta: Option<f64>,
    pub z: Option<f64>,
}

impl Location {
    pub fn radial(r: f64) -> Self {
        Self { r, theta: None, z: None }
    }

    pub fn rz(r: f64, z: f64) -> Self {
        Self { r, theta: None, z: Some(z) }
    }

    pub fn rtz(r: f64, theta: f64, z: f64) -> Self {
        Self { r, theta: Some(theta), z: Some(z) }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r={}", self.r)?;
        if let Some(t) = self.theta {
            write!(f, ", theta={t}")?;
        }
        if let Some(z) = self.z {
            write!(f, ", z={z}")?;
        }
        Ok(())
    }
}

/// Where an error was raised: module and operation names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub module: &'static str,
    pub op: &'static str,
}

impl Origin {
    pub const fn new(module: &'static str, op: &'static str) -> Self {
        Self { module, op }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}", self.module, self.op)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{origin}: invalid parameter: {msg}")]
    InvalidParameter { origin: Origin, msg: String },

    #[error("{origin}: inflow outside the admissibility window: {msg}")]
    Inadmissible { origin: Origin, msg: String },

    #[error("{origin}: sonic degeneration at {at} (U^2 - c^2 = {margin:e})")]
    SonicDegeneration { origin: Origin, at: Location, margin: f64 },

    #[error("{origin}: step size underflow (h = {h:e})")]
    StepUnderflow { origin: Origin, h: f64 },

    #[error("{origin}: nozzle too long: xi = {xi:e} at {at}")]
    NozzleTooLong { origin: Origin, xi: f64, at: Location },

    #[error("{origin}: no admissible multiplier: {msg}")]
    MultiplierFailure { origin: Origin, msg: String },

    #[error("{origin}: singular system: {msg}")]
    SingularSystem { origin: Origin, msg: String },

    #[error("{origin}: iteration diverged after {iterations} iterations: {msg}")]
    Divergence { origin: Origin, iterations: usize, msg: String, history: Vec<f64> },

    #[error("{origin}: vacuum (density argument {arg:e}) at {at}")]
    Vacuum { origin: Origin, at: Location, arg: f64 },

    #[error("{origin}: supersonicity lost (|grad phi|^2 - c^2 = {margin:e}) at {at}")]
    SupersonicityLost { origin: Origin, at: Location, margin: f64 },

    #[error("{origin}: stagnation (U1 = {u1:e}) at {at}")]
    Stagnation { origin: Origin, at: Location, u1: f64 },

    #[error("{origin}: stream function not monotone in z at {at}")]
    MonotonicityFailure { origin: Origin, at: Location },

    #[error("{origin}: stream value {value:e} outside entrance range [{lo:e}, {hi:e}] at {at}")]
    InverseOutOfRange { origin: Origin, at: Location, value: f64, lo: f64, hi: f64 },

    #[error("{origin}: iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    NotConverged { origin: Origin, iterations: usize, last_change: f64, history: Vec<f64> },
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } => 2,
            Error::Inadmissible { .. } => 10,
            Error::SonicDegeneration { .. } => 11,
            Error::StepUnderflow { .. } => 12,
            Error::NozzleTooLong { .. } => 13,
            Error::MultiplierFailure { .. } => 14,
            Error::SingularSystem { .. } => 15,
            Error::Divergence { .. } => 16,
            Error::Vacuum { .. } => 17,
            Error::SupersonicityLost { .. } => 18,
            Error::Stagnation { .. } => 19,
            Error::MonotonicityFailure { .. } => 20,
            Error::InverseOutOfRange { .. } => 21,
            Error::NotConverged { .. } => 22,
        }
    }

    pub fn origin(&self) -> Origin {
        match self {
            Error::InvalidParameter { origin, .. }
            | Error::Inadmissible { origin, .. }
            | Error::SonicDegeneration { origin, .. }
            | Error::StepUnderflow { origin, .. }
            | Error::NozzleTooLong { origin, .. }
            | Error::MultiplierFailure { origin, .. }
            | Error::SingularSystem { origin, .. }
            | Error::Divergence { origin, .. }
            | Error::Vacuum { origin, .. }
            | Error::SupersonicityLost { origin, .. }
            | Error::Stagnation { origin, .. }
            | Error::MonotonicityFailure { origin, .. }
            | Error::InverseOutOfRange { origin, .. }
            | Error::NotConverged { origin, .. } => *origin,
        }
    }

    /// Short machine-readable tag, used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::Inadmissible { .. } => "admissibility-failure",
            Error::SonicDegeneration { .. } => "sonic-degeneration",
            Error::StepUnderflow { .. } => "step-size-underflow",
            Error::NozzleTooLong { .. } => "nozzle-too-long",
            Error::MultiplierFailure { .. } => "multiplier-failure",
            Error::SingularSystem { .. } => "singular-system",
            Error::Divergence { .. } => "divergence",
            Error::Vacuum { .. } => "vacuum",
            Error::SupersonicityLost { .. } => "supersonicity-lost",
            Error::Stagnation { .. } => "stagnation",
            Error::MonotonicityFailure { .. } => "monotonicity-failure",
            Error::InverseOutOfRange { .. } => "inverse-out-of-range",
            Error::NotConverged { .. } => "not-converged",
        }
    }

    /// Per-iteration change history carried by iteration failures.
    pub fn history(&self) -> Option<&[f64]> {
        match self {
            Error::Divergence { history, .. } | Error::NotConverged { history, .. } => Some(history),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(origin: Origin, msg: impl Into<String>) -> Error {
    Error::InvalidParameter { origin, msg: msg.into() }
}
