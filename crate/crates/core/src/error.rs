use std::path::PathBuf;

use numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("event store is empty")]
    EmptyStore,
    #[error("node {node} is outside the node range 0..{nodes}")]
    InvalidNode { node: usize, nodes: usize },
    #[error("invalid event store: {0}")]
    InvalidStore(String),
    #[error("negative pool cannot avoid destination {0}")]
    DegeneratePool(usize),
    #[error("embeddings have different reference times ({0} vs {1})")]
    MismatchedTime(f64, f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("evaluation set is empty ({0})")]
    EmptyEvalSet(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
