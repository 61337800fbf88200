use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A tensor axis does not have the size an operation requires.
    #[error("dimension error on {axis}: {msg}")]
    Dimension { axis: String, msg: String },
    /// An API precondition was violated by the caller.
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Global pruning ran out of layers below the sparsity guard.
    #[error("layer collapse: {0}")]
    Collapse(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("summary error: {0}")]
    Summary(String),
    /// Non-finite values showed up during training.
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn dim(axis: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Dimension {
            axis: axis.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
