use thiserror::Error;

/// Errors raised anywhere in the model, fitting, inference and I/O layers.
#[derive(Debug, Error)]
pub enum GbmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("covariate column {column} has zero variance")]
    DegenerateCovariate { column: usize },
    #[error("covariate matrix is rank deficient: {0}")]
    Rank(String),
    #[error("constraint precondition violated: {0}")]
    Constraint(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("problem too large: {0}")]
    Size(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("parse error at {path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl GbmError {
    /// Prefixes a numerical error with where it happened.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            GbmError::Numeric(msg) => GbmError::Numeric(format!("{ctx}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, GbmError>;
