//! Error types shared across the pipeline stages.

use std::io;

use thiserror::Error;

/// Failure to decode a coded attribute value into its text form.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unknown age code {0}")]
    UnknownAgeCode(i64),
    #[error("unknown occupation code {0}")]
    UnknownOccupationCode(i64),
}

/// Malformed input data, carrying the 1-based line number it was found on.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: expected {expected} '::'-separated fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: field '{field}' is not a valid integer: '{value}'")]
    InvalidInteger {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: id field '{field}' must be a positive integer")]
    NonPositiveId { line: usize, field: &'static str },
    #[error("line {line}: gender must be 'M' or 'F', found '{value}'")]
    InvalidGender { line: usize, value: String },
    #[error("line {line}: {source}")]
    Decode {
        line: usize,
        #[source]
        source: DecodeError,
    },
    #[error("line {line}: rating {value} outside the 1..=5 range")]
    RatingOutOfRange { line: usize, value: i64 },
    #[error("line {line}: empty genre list")]
    EmptyGenres { line: usize },
    #[error("line {line}: empty '{field}' field")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: non-ASCII byte in an ASCII-only stream")]
    NonAscii { line: usize },
    #[error("line {line}: malformed record: {message}")]
    Record { line: usize, message: String },
}

/// Top-level error for every pipeline operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: ParseError,
    },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("user {user_id}: sequence has {len} steps, need at least 3 to split")]
    ShortSequence { user_id: u32, len: usize },
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("render: {0}")]
    Render(String),
    #[error("config: {0}")]
    Config(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, source: ParseError) -> Self {
        Error::Parse {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
