use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Cholesky pivot `pivot` (0-based) was not strictly positive.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    /// The iteration budget ran out. `last` holds the final iterate, flattened
    /// column-major when it is a matrix.
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        last: Vec<f64>,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient samples: need at least 2, got {0}")]
    InsufficientSamples(usize),

    #[error("no tuning combination survived: {}", .0.join("; "))]
    NoValidCombo(Vec<String>),

    #[error("parse error in {file}, row {row}, column {column}: {message}")]
    Parse {
        file: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("subject {subject}: {source}")]
    Subject {
        subject: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI on failure.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::NotConverged { .. } => "convergence_failure",
            Error::EmptyInput(_) => "empty_input",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::NoValidCombo(_) => "no_valid_combo",
            Error::Parse { .. } => "parse_error",
            Error::Io { .. } => "io_error",
            Error::Json { .. } => "json_error",
            Error::Subject { source, .. } => source.code(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
