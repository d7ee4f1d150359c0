use thiserror::Error;

use crate::data::DatasetError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] tensorcore::TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] crate::model::CheckpointError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("concept sub-models are frozen for stage-2 training")]
    FrozenConcepts,
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |source| CoreError::Io {
        path: path.display().to_string(),
        source,
    }
}
