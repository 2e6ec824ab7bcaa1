use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON; `offset` is the byte offset of the failure in the input.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes, found {actual}")]
    Length { expected: u64, actual: u64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("png error: {0}")]
    Png(String),

    #[error("external command failed: {0}")]
    External(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Converts a serde_json error into a [`Error::Parse`] carrying the byte offset
    /// of the failing position within `input`.
    pub(crate) fn json(input: &str, err: serde_json::Error) -> Self {
        Error::Parse {
            offset: byte_offset(input, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

// serde_json reports 1-based line and column (column counted in bytes).
fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}
