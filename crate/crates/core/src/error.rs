use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no usable attributes: the aligned schema is empty")]
    EmptySchema,

    #[error("duplicate attribute `{0}` in schema")]
    DuplicateAttribute(String),

    #[error("{path}: row {row}: {message}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: header is missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("not enough labeled pairs: need {needed} {class}, found {available}")]
    InsufficientPairs {
        class: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("support set size must be even, got {0}")]
    OddSupportSize(usize),

    #[error("{0} partition required")]
    MissingPartition(&'static str),

    #[error("pair `{pair_id}` has no label but the {partition} partition requires one")]
    UnlabeledPair {
        pair_id: String,
        partition: &'static str,
    },

    #[error("pair `{0}` appears in more than one partition")]
    PartitionOverlap(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("{0} is empty")]
    EmptyInput(&'static str),

    #[error("labels must contain both classes")]
    SingleClass,

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("infeasible synthetic config: {0}")]
    InfeasibleConfig(String),

    #[error("embedding file {path}: line {line}: {message}")]
    EmbeddingFile {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
