use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("error probability {0} outside the open interval (0, 0.5)")]
    ErrorProbDomain(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected} users, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("exhaustive search limited to {max} users, got {got}")]
    TooManyUsers { max: usize, got: usize },

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("cell {cell}: {failed} of {trials} trials failed")]
    CellFailed { cell: String, failed: usize, trials: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
