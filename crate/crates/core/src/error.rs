use alloc::string::String;

use crate::{DocId, PartitionId};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("document {0} has no terms")]
    EmptyDocument(DocId),
    #[error("duplicate document id {0}")]
    DuplicateDocument(DocId),
    #[error("term `{term}` of document {doc} is not in the dictionary")]
    UnknownTerm { doc: DocId, term: String },
    #[error("partition count {s} out of range 1..={max}")]
    PartitionCount { s: usize, max: usize },
    #[error("unknown partition {0}")]
    UnknownPartition(PartitionId),
    #[error("unknown document {0}")]
    UnknownDocument(DocId),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("{0}")]
    InvalidParameter(&'static str),
    #[error("negative query entry {value} at position {position}")]
    NegativeQuery { position: usize, value: f64 },
    #[error("could not generate a key within condition cap {cap:e} after {attempts} attempts")]
    IllConditioned { cap: f64, attempts: usize },
    #[error("discriminator needs samples from both classes")]
    SingleClass,
    #[error("no partitions selected")]
    NoPartitions,
    #[error("access denied")]
    AccessDenied,
}
