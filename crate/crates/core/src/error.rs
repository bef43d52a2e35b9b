use crate::tensor::Shape4;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape4,
        right: Shape4,
    },

    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("{op}: expected {expected} channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: invalid shape {shape}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Shape4,
        reason: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable tag used by the CLI to make failures machine-parseable.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::ChannelMismatch { .. }
            | Error::InvalidShape { .. } => "shape",
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "argument",
            Error::NonFinite(_) => "non_finite",
            Error::Parse { .. } => "parse",
            Error::UnknownParam(_) => "param",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
