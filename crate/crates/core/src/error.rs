use thiserror::Error;

/// Errors raised by field operations, right-hand-side assembly and the
/// experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("non-finite value in field `{0}`")]
    NonFinite(String),

    #[error("non-zero mean {mean:e} exceeds tolerance {tol:e}")]
    NonZeroMean { mean: f64, tol: f64 },

    #[error("density floor violated: min(1 + eps*sigma) = {min} < {floor}")]
    DensityFloor { min: f64, floor: f64 },

    #[error("temperature floor violated: min T = {min} < {floor}")]
    TemperatureFloor { min: f64, floor: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("fit requires >= 3 points, got {0}")]
    InsufficientFit(usize),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// True for the pointwise/mass invariants that signal an impending
    /// blow-up rather than bad input.
    pub fn is_abort(&self) -> bool {
        matches!(
            self,
            Error::NonZeroMean { .. }
                | Error::DensityFloor { .. }
                | Error::TemperatureFloor { .. }
                | Error::NonFinite(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
