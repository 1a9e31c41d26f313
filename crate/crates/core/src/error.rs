use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numerical consistency check failed: {0}")]
    NumericalConsistency(String),

    #[error("correlation kernel is not positive semidefinite: eigenvalue {eigenvalue:e} below -1e-6 * {lambda_max:e}")]
    KernelNotPsd { eigenvalue: f64, lambda_max: f64 },

    #[error("mode {index} is degenerate (eigenvalue {eigenvalue:e}); Nystrom extension undefined")]
    DegenerateMode { index: usize, eigenvalue: f64 },

    #[error("requested {requested} modes but only {available} are available")]
    InsufficientModes { requested: usize, available: usize },

    #[error("hierarchy size for S = {stochastic_dim}, P = {order} exceeds addressable capacity")]
    Capacity { stochastic_dim: usize, order: usize },

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("propagation diverged at t = {time}: {detail} (try a smaller dt_max)")]
    PropagationDiverged { time: f64, detail: String },

    #[error("corrupted state: trace deviates from 1 by {deviation:e}")]
    CorruptedState { deviation: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidOperator(_)
            | Error::DimensionMismatch { .. }
            | Error::InsufficientModes { .. }
            | Error::Capacity { .. }
            | Error::BasisMismatch(_)
            | Error::InvalidInput(_)
            | Error::Config { .. }
            | Error::Io(_) => 1,
            Error::NumericalConsistency(_)
            | Error::KernelNotPsd { .. }
            | Error::DegenerateMode { .. }
            | Error::PropagationDiverged { .. }
            | Error::CorruptedState { .. } => 2,
        }
    }
}
