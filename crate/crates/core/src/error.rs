use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was called with arguments that break its contract
    /// (mismatched shapes, bad hyperparameters, empty inputs, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value outside an operation's mathematical domain.
    #[error("domain error at element {index}: value {value} is outside the domain of {op}")]
    Domain { op: &'static str, index: usize, value: f64 },

    /// Malformed input bytes.
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    /// Well-formed input using a feature this crate does not handle.
    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("model config mismatch: expected {expected}, found {found}")]
    ConfigMismatch { expected: String, found: String },

    /// NaN or infinity surfaced where only finite values are allowed.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(offset: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
