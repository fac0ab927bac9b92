use std::path::PathBuf;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid shapes, ranges or settings supplied by the caller.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file could not be read or written.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A dataset or checkpoint file is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A required artifact (checkpoint, dataset split) does not exist.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Training produced a non-finite loss or gradient.
    #[error("divergence: {0}")]
    Divergence(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for returning a configuration error.
macro_rules! config_err {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Config(format!($($arg)*)))
    };
}
pub(crate) use config_err;
