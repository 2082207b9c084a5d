use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the augmentation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path} at byte offset {offset} (line {line}, column {column}): {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dataset integrity error: {0}")]
    Integrity(String),

    #[error("mask error: {0}")]
    Mask(String),

    #[error("corrupt RLE: run lengths sum to {sum}, expected {expected} ({height}x{width})")]
    RleCorrupt {
        sum: u64,
        expected: u64,
        height: u32,
        width: u32,
    },

    #[error("embedding file format error: {0}")]
    EmbeddingFormat(String),

    #[error("embedding validation error: {0}")]
    EmbeddingValidation(String),

    #[error("no {kind} embedding for id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("pool too small: {survivors} candidates survived, at least {required} required")]
    PoolTooSmall { survivors: usize, required: usize },

    #[error("wrong number of negatives: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("compose error: {0}")]
    Compose(String),

    #[error("image {image_id} could not be read: {message}")]
    Image { image_id: u64, message: String },

    #[error(
        "{} of {} samples failed, above the 1% limit",
        .0.totals.errored,
        .0.totals.samples
    )]
    RunFailed(Box<crate::pipeline::RunReport>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
