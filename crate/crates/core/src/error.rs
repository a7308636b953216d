use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("depth mismatch: {0} vs {1}")]
    DepthMismatch(usize, usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// `M` is too small for the requested guarantee; carries the smallest
    /// `M` that satisfies it.
    #[error("M = {m} too small: {what} requires M >= {required}")]
    PreconditionM {
        m: u32,
        required: u32,
        what: String,
    },

    #[error("point is not covered by any enumerated cube")]
    EnumerationMiss,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
