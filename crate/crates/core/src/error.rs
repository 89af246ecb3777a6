use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Every variant maps onto a stable machine-readable [`Error::kind`] string,
/// which the command-line driver prints on failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of range: {0}")]
    Range(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("key does not match ciphertext: {0}")]
    KeyMismatch(String),
    #[error("integrity check failed: {0}")]
    Tamper(String),
    #[error("not authorized: {0}")]
    Authorization(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("already exists: {0}")]
    Duplicate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Short identifier of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Format { .. } => "format",
            Error::Unsupported(_) => "unsupported",
            Error::Encoding(_) => "encoding",
            Error::Contract(_) => "contract",
            Error::KeyMismatch(_) => "key-mismatch",
            Error::Tamper(_) => "tamper",
            Error::Authorization(_) => "authorization",
            Error::NotFound(_) => "not-found",
            Error::Duplicate(_) => "duplicate",
            Error::Io(_) => "io",
            Error::Serde(_) => "serialization",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
