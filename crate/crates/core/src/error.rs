use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("sharing error: {0}")]
    Sharing(String),

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("preprocessing material error: {0}")]
    Material(String),

    #[error("session aborted by {party}: {reason}")]
    Aborted { party: String, reason: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("size guard: {0}")]
    SizeGuard(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
