use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inputs violate a documented invariant (bad index, wrong dimension, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A quantity became non-finite during inference.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed but does not match its schema.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
