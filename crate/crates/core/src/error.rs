use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quality level {level} out of range (max {max})")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("invalid video spec: {0}")]
    Video(String),

    #[error("invalid channel: {0}")]
    Channel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("trace file {path}: line {line}: {msg}")]
    TraceParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty quality vector")]
    EmptyQuality,

    #[error("playback duration must be positive")]
    ZeroPlayback,

    #[error("oracle instance too large: {0}")]
    EnumerationTooLarge(String),

    #[error("LP solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from bad input rather than a failure while
    /// running.
    pub fn is_config(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Solver(_) | Error::EmptyQuality | Error::ZeroPlayback
        )
    }
}
