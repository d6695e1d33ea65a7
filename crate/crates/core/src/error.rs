use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid query pair: {0}")]
    InvalidPair(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("query of {terms} terms exceeds the {limit}-term limit")]
    QueryTooLong { terms: usize, limit: usize },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed {what} file, line {line}: {msg}")]
    Format {
        what: &'static str,
        line: usize,
        msg: String,
    },
}
