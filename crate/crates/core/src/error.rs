use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed audio file: {0}")]
    Format(String),

    #[error("unsupported audio: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("filter design infeasible: {0}")]
    Design(String),

    #[error("unsupported rate conversion {from} Hz -> {to} Hz: {reason}")]
    Ratio { from: u32, to: u32, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward already ran on this tape")]
    BackwardTwice,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("feature file: {0}")]
    FeatureFile(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            hound::Error::Unsupported => Error::Unsupported("wav feature not supported".into()),
            other => Error::Format(other.to_string()),
        }
    }
}
