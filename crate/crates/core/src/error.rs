use thiserror::Error;

use crate::ontology::TermId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid term id {0:?}")]
    InvalidTermId(String),
    #[error("unknown relation kind {0:?}")]
    UnknownRelation(String),
    #[error("unknown namespace {0:?}")]
    UnknownNamespace(String),
    #[error("ontology contains a cycle: {0}")]
    Cycle(String),
    #[error("unknown term {0}")]
    UnknownTerm(TermId),
    #[error("term {0} is obsolete")]
    ObsoleteTerm(TermId),
    #[error("term {0} does not reach a namespace root")]
    UnreachableTerm(TermId),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("embedding file: {0}")]
    EmbeddingFormat(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
