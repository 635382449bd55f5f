use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum MarError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("incomplete grid at (t={t},row={row},col={col})")]
    IncompleteGrid { t: usize, row: String, col: String },

    #[error("duplicate cell at line {line}: (t={t},row={row},col={col})")]
    Duplicate {
        line: usize,
        t: usize,
        row: String,
        col: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MarError>;

impl MarError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        MarError::Dimension(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        MarError::Numeric(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        MarError::Precondition(msg.into())
    }
}
