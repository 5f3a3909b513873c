use std::fmt;

use chainph_core::{Error, RunStatus};

/// Process outcome. Every exit path of the binary maps to one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Completed,
    Converged,
    /// Successful command that is not a simulation (`verify`, `transform`).
    Ok,
    ConfigError,
    ChartBreakdown,
    NumericalFailure,
    VerificationFailed,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Completed | ExitStatus::Converged | ExitStatus::Ok => 0,
            ExitStatus::ConfigError => 2,
            ExitStatus::ChartBreakdown => 3,
            ExitStatus::NumericalFailure => 4,
            ExitStatus::VerificationFailed => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExitStatus::Completed => "Completed",
            ExitStatus::Converged => "Converged",
            ExitStatus::Ok => "Ok",
            ExitStatus::ConfigError => "ConfigError",
            ExitStatus::ChartBreakdown => "ChartBreakdown",
            ExitStatus::NumericalFailure => "NumericalFailure",
            ExitStatus::VerificationFailed => "VerificationFailed",
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<RunStatus> for ExitStatus {
    fn from(status: RunStatus) -> Self {
        match status {
            RunStatus::Completed => ExitStatus::Completed,
            RunStatus::Converged => ExitStatus::Converged,
            RunStatus::ChartBreakdown => ExitStatus::ChartBreakdown,
            RunStatus::NumericalFailure => ExitStatus::NumericalFailure,
        }
    }
}

/// Classifies a library error by what the user has to fix.
pub fn status_of(err: &Error) -> ExitStatus {
    match err {
        Error::ChartViolation(_)
        | Error::ChartGuard { .. }
        | Error::NearSingularChart { .. }
        | Error::DomainViolation(_) => ExitStatus::ChartBreakdown,
        Error::Singular { .. }
        | Error::IllConditioned { .. }
        | Error::SingularInput { .. }
        | Error::NumericalFailure(_) => ExitStatus::NumericalFailure,
        Error::DimensionMismatch { .. }
        | Error::DimensionTooSmall(_)
        | Error::DimensionTooLarge(_)
        | Error::SingularPairing
        | Error::NotAnnihilator { .. }
        | Error::InvalidParameter { .. }
        | Error::InvalidStart
        | Error::MissingSource(_) => ExitStatus::ConfigError,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub status: ExitStatus,
    pub message: String,
}

impl CliError {
    pub fn new(status: ExitStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.status, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError::new(status_of(&err), err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::new(ExitStatus::ConfigError, format!("i/o error: {err}"))
    }
}
