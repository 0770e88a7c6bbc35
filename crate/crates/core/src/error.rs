use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error categories map onto process exit codes in the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {term} at example {index}")]
    NonFinite { term: String, index: usize },

    #[error("training diverged at epoch {epoch}, step {step}: {term} became non-finite")]
    Divergence { epoch: usize, step: usize, term: String },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric divergence, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidArgument(_) => 2,
            Error::Format { .. } | Error::ShapeMismatch { .. } => 3,
            Error::NonFinite { .. } | Error::Divergence { .. } => 4,
            Error::Io(_) => 5,
        }
    }

    /// Machine-readable category printed alongside the exit code.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            3 => "data",
            4 => "divergence",
            _ => "io",
        }
    }
}
