use thiserror::Error;

/// Errors produced by training, clustering and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad dimensions, inconsistent settings, unknown keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical invariant was violated (non-finite loss, gradient or logit).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed on-disk data (corpus, trials, checkpoint, log).
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
