use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
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

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("node {0} has no label")]
    MissingLabel(usize),

    #[error("node {0} has no incoming edges (empty softmax segment)")]
    EmptySegment(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("not enough candidates: need {needed} {what}, only {available} available")]
    InsufficientCandidates {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("inconsistent perturbation: {0}")]
    Perturbation(String),

    #[error("node mismatch: {0}")]
    NodeMismatch(String),

    #[error("edge support mismatch: {0}")]
    Support(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
