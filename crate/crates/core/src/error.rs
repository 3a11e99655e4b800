//! Crate-wide error type.

use std::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the pipeline.
#[derive(Debug)]
pub enum Error {
    /// A text became empty after whitespace normalization.
    EmptyText { id: String },
    /// A data file row could not be parsed.
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    /// A label value outside {0, 1}.
    Label { location: String, value: i64 },
    /// A pair was requested from an example that has no rephrase.
    MissingRephrase { id: String },
    /// k-fold split with more folds than ids.
    InvalidFoldCount { n: usize, k: usize },
    /// Invalid configuration value.
    Config(String),
    /// Token id outside the vocabulary.
    Vocab { id: usize },
    /// Non-finite value produced during forward/backward or training.
    Numerics {
        layer: Option<usize>,
        message: String,
    },
    /// Mismatched model/cache/optimizer state.
    State(String),
    /// Mismatched shapes, lengths, or dataset schemas.
    Schema(String),
    /// pad_batch called with no inputs.
    EmptyBatch,
    /// Token ids do not decode to valid UTF-8.
    Decode(String),
    /// A required run artifact (checkpoint, registry entry) is absent.
    MissingArtifact(String),
    /// Filesystem failure with the path that caused it.
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyText { id } => {
                write!(f, "text '{id}' is empty after normalization")
            }
            Error::Parse {
                path,
                line,
                message,
            } => write!(f, "{path}:{line}: {message}"),
            Error::Label { location, value } => {
                write!(f, "label at {location} must be 0 or 1, got {value}")
            }
            Error::MissingRephrase { id } => {
                write!(f, "example '{id}' has no rephrase; cannot build a pair")
            }
            Error::InvalidFoldCount { n, k } => {
                write!(f, "cannot split {n} ids into {k} folds")
            }
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Vocab { id } => write!(f, "token id {id} outside vocabulary"),
            Error::Numerics { layer, message } => match layer {
                Some(i) => write!(f, "non-finite value in layer {i}: {message}"),
                None => write!(f, "non-finite value: {message}"),
            },
            Error::State(msg) => write!(f, "state mismatch: {msg}"),
            Error::Schema(msg) => write!(f, "schema mismatch: {msg}"),
            Error::EmptyBatch => write!(f, "cannot pad an empty batch"),
            Error::Decode(msg) => write!(f, "decode failure: {msg}"),
            Error::MissingArtifact(msg) => write!(f, "missing artifact: {msg}"),
            Error::Io { path, source } => write!(f, "{path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
