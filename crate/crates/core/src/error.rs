use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported distortion kind `{0}`")]
    UnsupportedDistortion(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("referenced file does not exist: {0}")]
    ReferentialIntegrity(PathBuf),

    #[error("screening left {remaining} rater(s) for `{dimension}`, need at least 3")]
    ScreeningDegenerate { dimension: String, remaining: usize },

    #[error("no retained scores for `{dimension}` on `{image}`")]
    MissingScores { image: String, dimension: String },

    #[error("split infeasible: {0}")]
    SplitInfeasible(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("no data: {0}")]
    NoData(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
