use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("image {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall { width: usize, height: usize, window: usize },

    #[error("{path}:{line}: {field}: {message}")]
    Parse { path: String, line: usize, field: String, message: String },

    #[error("non-finite gradient for gaussian {index} ({field})")]
    NonFiniteGradient { index: usize, field: &'static str },

    #[error("non-finite loss at iteration {iter} (view {view})")]
    NonFiniteLoss { iter: usize, view: String },

    #[error("camera is not registered with the oracle fixer")]
    UnregisteredCamera,

    #[error("fixer failed: {0}")]
    Fixer(String),

    #[error("no non-degenerate frame pairs")]
    NoValidPairs,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
