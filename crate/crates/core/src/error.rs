use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("failed to decode {name}: {message}")]
    Decode { name: String, message: String },

    #[error("failed to encode image: {0}")]
    Encode(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("lookup failed: {0}")]
    Lookup(String),

    /// A backend (remote service or file store) could not produce a result.
    #[error("backend error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },

    /// A backend answered, but with something that violates the wire contract.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("inpainting component {label} failed: {source}")]
    Pipeline {
        label: u32,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
