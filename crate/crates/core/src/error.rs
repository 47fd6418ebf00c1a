//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by the library.
///
/// Variants split into two broad classes that the CLI maps onto exit codes:
/// configuration/input problems ([`Error::is_input_error`] returns true) and
/// runtime/numeric problems (everything else).
#[derive(Error, Debug)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format_version {found} (expected {expected})")]
    Format { found: u32, expected: u32 },

    #[error("training failed at epoch {epoch}, batch {batch}: {msg}")]
    Train {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad configuration or input files, as opposed
    /// to runtime/numeric failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape { .. }
                | Error::Index(_)
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::Empty(_)
                | Error::Io { .. }
                | Error::Serde(_)
        )
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
