use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum GwError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A series or support scan could not be certified to the required accuracy.
    #[error("numeric certification failed: {0}")]
    Certification(String),

    #[error("metadata mismatch: {0}")]
    Metadata(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GwError {
    /// Process exit status for the CLI: 2 for numeric-certification failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            GwError::Certification(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, GwError>;
