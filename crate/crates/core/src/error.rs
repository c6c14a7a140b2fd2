use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so that the command line driver can map them onto
/// its exit codes (`1` usage, `2` data, `3` numerical failure).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(
        "value pool `{pool}` exhausted: {requested} unique values requested, {available} available"
    )]
    PoolExhausted {
        pool: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("field span {start}..{end} out of range for document of length {len}")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("operation requires {expected} but model was trained for {found}")]
    WrongTask { expected: String, found: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::WrongTask { .. } => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(format!("json: {e}"))
    }
}
