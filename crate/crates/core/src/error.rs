use std::path::PathBuf;

use thiserror::Error;

use crate::features::StoreKey;
use crate::llm_client::ClientError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}: no records")]
    EmptyInput(String),

    #[error("cannot build an index over an empty database")]
    EmptyDatabase,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing score store entries: {}", format_keys(.0))]
    MissingScores(Vec<StoreKey>),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(&'static str),

    #[error("numeric overflow in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("input exceeds context budget ({tokens} > {budget} tokens)")]
    BudgetExceeded { tokens: usize, budget: usize },

    #[error("requested {requested} examples from a pool of {available}")]
    InsufficientPool { requested: usize, available: usize },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("malformed store file: {0}")]
    StoreFormat(String),

    #[error("too many failed generations: {failed} of {total} rows")]
    TooManyTombstones { failed: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error(transparent)]
    Client(#[from] ClientError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}

fn format_keys(keys: &[StoreKey]) -> String {
    keys.iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
