//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("rejected input: {0}")]
    Input(String),

    #[error("unknown vocabulary word `{0}`")]
    Oov(String),

    #[error("sequence length {got} exceeds maximum {max}")]
    Overlong { got: usize, max: usize },

    #[error("codec used before training")]
    UninitializedCodec,

    #[error("codec is frozen: {0}")]
    FrozenCodec(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("dataset parse error at line {line}: {msg}")]
    DatasetParse { line: usize, msg: String },

    #[error("run directory is locked: {0}")]
    Locked(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
