use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty candidate corpus")]
    EmptyCorpus,
    #[error("{candidates} candidates but {references} reference sets")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("reference set {0} is empty")]
    EmptyReferenceSet(usize),
    #[error("BLEU order must be between 1 and 4, got {0}")]
    Order(usize),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("id {0:?} appears more than once")]
    DuplicateId(String),
    #[error("no references for id {0:?}")]
    MissingReference(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub(crate) fn check_corpus(candidates: &[String], references: &[Vec<String>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(MetricError::EmptyReferenceSet(i));
    }
    Ok(())
}
