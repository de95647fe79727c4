use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is not positive definite (pivot {pivot} at elimination step {step})")]
    NotPositiveDefinite { step: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index ({row}, {col}) out of range")]
    IndexOutOfRange { row: usize, col: usize },

    #[error("nonzero entry ({row}, {col}) lies off the graph pattern")]
    OffPatternEntry { row: usize, col: usize },

    #[error("log density is not concave near {at}")]
    ConcavityViolation { at: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no posterior draws available")]
    EmptySamples,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::IndexOutOfRange { .. }
            | Error::OffPatternEntry { .. }
            | Error::EmptySamples => 2,
            Error::NotPositiveDefinite { .. } | Error::ConcavityViolation { .. } | Error::Numerical(_) => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }
}
