use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not fit the operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller-side precondition was violated (bad label, non-scalar root, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset content unusable for the requested operation.
    #[error("input error: {0}")]
    Input(String),

    #[error("build error at layer {index}: {message}")]
    Build { index: usize, message: String },

    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An error raised inside a named pipeline stage.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the pipeline stage (or candidate) it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
