use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: u64, reason: String },

    #[error("dimension mismatch at {location}: expected {expected}, found {found}")]
    DimensionMismatch {
        location: String,
        expected: usize,
        found: usize,
    },

    #[error("label {label} out of range for {n_classes} classes at {location}")]
    LabelOutOfRange {
        location: String,
        label: u64,
        n_classes: u32,
    },

    #[error("non-finite feature value at {location}")]
    NonFiniteFeature { location: String },

    #[error("csv parse error at line {line}: {reason}")]
    Csv { line: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("training diverged to non-finite parameters at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("ensemble needs at least 2 models, got {0}")]
    TooFewModels(usize),

    #[error("tree node {node} has no training samples")]
    EmptyTreeNode { node: String },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
