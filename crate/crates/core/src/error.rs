use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid depth {0} (must be positive)")]
    InvalidDepth(f64),
    #[error("point is behind the camera (Z = {0})")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence too short: {frames} frames, need at least {required}")]
    SequenceTooShort { frames: usize, required: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("no temporal overlap between trajectory and joint track")]
    NoOverlap,
    #[error("skeleton has no joints")]
    NoJoints,
    #[error("insufficient data: {have} samples, need at least {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }
}
