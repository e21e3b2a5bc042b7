use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown function `{0}`")]
    UnknownFunction(String),

    #[error("{function} expects {expected} arguments, got {found}")]
    Arity {
        function: String,
        expected: String,
        found: usize,
    },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("semantic operator requires text column, `{column}` is {found}")]
    NonTextColumn { column: String, found: String },

    #[error("type mismatch: {0}")]
    TypeMismatch(String),

    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id {id} on line {line}")]
    DuplicateId { id: u64, line: usize },

    #[error("mixed dimensions: expected {expected}, found {found} for id {id}")]
    MixedDimensions { expected: usize, found: usize, id: u64 },

    #[error("non-finite value in vector for id {0}")]
    NonFinite(u64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty text cannot be embedded")]
    EmptyText,

    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    #[error("unparseable response: {0}")]
    Protocol(String),

    #[error("undefined imbalance ratio: fewer than two classes with nonzero counts")]
    UndefinedImbalance,

    #[error("single-class sample: cannot train a proxy model")]
    SingleClass,

    #[error("evaluation set is empty")]
    EmptyEvaluation,

    #[error("model file version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Wrap an error with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
