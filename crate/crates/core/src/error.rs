use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Parse,
    Integrity,
    Input,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("cannot encode character {ch:?} (U+{:04X}){}", *.ch as u32, doc_suffix(.doc_index))]
    Encoding { ch: char, doc_index: Option<usize> },

    #[error("token id {id} out of range for vocabulary of size {size}{}", doc_suffix(.doc_index))]
    InvalidToken {
        id: u32,
        size: usize,
        doc_index: Option<usize>,
    },

    #[error("vocabulary size mismatch: {left} vs {right}")]
    VocabMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("{0}")]
    Empty(&'static str),

    #[error("local index {index} out of range for plan with {len} rows")]
    LocalOutOfRange { index: usize, len: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn doc_suffix(doc_index: &Option<usize>) -> String {
    match doc_index {
        Some(i) => format!(" (document {i})"),
        None => String::new(),
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Parse { .. } => ErrorKind::Parse,
            Error::Integrity(_) | Error::VocabMismatch { .. } | Error::Dimension { .. } => {
                ErrorKind::Integrity
            }
            Error::Encoding { .. }
            | Error::InvalidToken { .. }
            | Error::Empty(_)
            | Error::LocalOutOfRange { .. } => ErrorKind::Input,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(source_name: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line: err.line(),
            column: err.column(),
            message: {
                let mut msg = err.to_string();
                if let Some(pos) = msg.rfind(" at line ") {
                    msg.truncate(pos);
                }
                msg
            },
        }
    }

    /// Attaches a document index to errors that carry one.
    pub fn in_document(self, index: usize) -> Self {
        match self {
            Error::Encoding { ch, .. } => Error::Encoding {
                ch,
                doc_index: Some(index),
            },
            Error::InvalidToken { id, size, .. } => Error::InvalidToken {
                id,
                size,
                doc_index: Some(index),
            },
            other => other,
        }
    }
}
