//! Shared error type for the whole crate.

/// Errors produced by filters, solvers and the experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operand shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An ensemble has too few members for the requested operation.
    #[error("insufficient members: ensemble size {n} (need at least {min})")]
    InsufficientMembers { n: usize, min: usize },

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A matrix that must be symmetric positive definite is not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A linear system or covariance estimate is singular.
    #[error("singular input: {0}")]
    Singular(String),

    /// The penalized log-determinant solver ran out of sweeps.
    #[error("solver did not converge after {sweeps} sweeps (residual {residual:.3e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    /// Every trial of an experiment diverged; no statistics can be formed.
    #[error("all {trials} trials diverged")]
    AllTrialsDiverged { trials: usize },

    /// Configuration file parsing or validation failed.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
