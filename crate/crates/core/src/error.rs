use std::path::PathBuf;

use crate::scene::{ObjectId, PredicateKind};

/// Errors raised across the planning and learning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("could not place object {object} after {attempts} rejection samples")]
    PlacementExhausted { object: ObjectId, attempts: usize },
    #[error("unknown object id {0}")]
    UnknownObject(ObjectId),
    #[error("invalid goal: {0}")]
    InvalidGoal(String),
    #[error("action {0} is not applicable in the current symbolic state")]
    InapplicableAction(String),
    #[error("goal subject {0} is not in the allowed object set")]
    SubjectNotAllowed(ObjectId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite residual in constraint `{0}`")]
    NonFiniteResidual(String),
    #[error("path cost requested for an infeasible result")]
    InfeasibleResult,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model has no predicate extractor for {0}")]
    ModelPredicateMissing(PredicateKind),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
