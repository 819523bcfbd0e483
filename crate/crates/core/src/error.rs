use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("malformed input at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("scaled norm {norm} exceeds 1; choose a larger scale")]
    NormBound { norm: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
