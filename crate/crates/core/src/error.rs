use std::path::PathBuf;

use navinstruct_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("min_frequency must be at least 1")]
    MinFrequency,
    #[error("token id {id} is not in a vocabulary of {size}")]
    InvalidId { id: usize, size: usize },
    #[error("trajectory has no visual steps")]
    EmptyTrajectory,
    #[error("feature vector {step} has {got} values, expected {expected}")]
    FeatureDim {
        step: usize,
        expected: usize,
        got: usize,
    },
    #[error("assembled length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("instruction ids must not contain special token {0}")]
    SpecialInInstruction(usize),
    #[error("empty reference instruction")]
    EmptyReference,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
