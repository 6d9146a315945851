use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("schema error{}: {message}", object_suffix(*.object_id))]
    Schema {
        object_id: Option<u64>,
        message: String,
    },

    #[error("invariant violated{}: {message}", object_suffix(*.object_id))]
    Invariant {
        object_id: Option<u64>,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss queue not full ({len} of {capacity} entries)")]
    QueueNotFull { len: usize, capacity: usize },

    #[error("object {object_id}: no valid perturbed box after {attempts} attempts")]
    Resample { object_id: u64, attempts: usize },

    #[error("object id mismatch: {0}")]
    IdMismatch(String),
}

fn object_suffix(id: Option<u64>) -> String {
    match id {
        Some(id) => format!(" (object {id})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(object_id: Option<u64>, message: impl Into<String>) -> Self {
        Error::Schema {
            object_id,
            message: message.into(),
        }
    }

    pub(crate) fn invariant(object_id: Option<u64>, message: impl Into<String>) -> Self {
        Error::Invariant {
            object_id,
            message: message.into(),
        }
    }

    /// Object named by the diagnostic, when there is one.
    pub fn object_id(&self) -> Option<u64> {
        match self {
            Error::Schema { object_id, .. } | Error::Invariant { object_id, .. } => *object_id,
            Error::Resample { object_id, .. } => Some(*object_id),
            _ => None,
        }
    }
}
