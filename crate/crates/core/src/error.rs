use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate box: w={w}, h={h}")]
    DegenerateBox { w: f64, h: f64 },

    #[error("unknown source kind `{0}`")]
    UnknownSourceKind(String),

    #[error("no admissible initial view after {draws} draws (failing constraint: {constraint})")]
    Infeasible { draws: usize, constraint: &'static str },

    #[error("no ground-truth crops left after filtering")]
    NoGroundTruth,

    #[error("aesthetic score {0} outside [0, 5]")]
    ScoreOutOfRange(f64),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("missing image {0}")]
    MissingImage(PathBuf),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss ({0})")]
    NonFiniteLoss(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("session already took the maximum of {0} steps")]
    MaxSteps(usize),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
