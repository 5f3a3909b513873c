use thiserror::Error;

/// Failures raised by model evaluation, coordinate charts, the controller
/// and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("dimension {0} is too small (need n >= 3)")]
    DimensionTooSmall(usize),

    #[error("dimension {0} is too large for the w-chart (n <= 12)")]
    DimensionTooLarge(usize),

    #[error("Gc^T A is singular at a probe point")]
    SingularPairing,

    #[error("annihilator check failed: |Gc^T Q| = {residual:e}")]
    NotAnnihilator { residual: f64 },

    #[error("matrix is singular ({context})")]
    Singular { context: &'static str },

    #[error("matrix is ill-conditioned: condition estimate {condition:e} ({context})")]
    IllConditioned {
        condition: f64,
        context: &'static str,
    },

    #[error("w-chart is undefined at |z1| = {z1:e}")]
    NearSingularChart { z1: f64 },

    #[error("coordinate chart failed: {0}")]
    ChartViolation(String),

    #[error("controller guard tripped: |w1| = {w1:e}")]
    ChartGuard { w1: f64 },

    #[error("input matrix is singular: |det G| = {det:e}")]
    SingularInput { det: f64 },

    #[error("configuration outside the model domain: {0}")]
    DomainViolation(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("initial state lies on the chart singularity (z1 = 0)")]
    InvalidStart,

    #[error("non-finite value encountered ({0})")]
    NumericalFailure(&'static str),

    #[error("model has no source constrained system ({0})")]
    MissingSource(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
