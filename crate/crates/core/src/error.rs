use std::path::PathBuf;

use thiserror::Error;

use crate::schema::SourceId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("registry error: {0}")]
    Registry(String),

    #[error("question {question}: {message}")]
    InvalidQuestion { question: String, message: String },

    #[error("unknown label {label:?} for question {question}")]
    UnknownLabel { question: String, label: String },

    #[error("unknown question {0}")]
    UnknownQuestion(String),

    #[error("split assignment: {0}")]
    Split(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("question {question} requires the {stream} stream, which is missing")]
    MissingStream { question: String, stream: SourceId },

    #[error("atom bundle {path}: {issues:?}")]
    Bundle { path: String, issues: Vec<String> },

    #[error("memory document line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0} used before fit")]
    NotFitted(&'static str),

    #[error("skip policy: {0}")]
    Policy(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("missing artifact {path}; run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs rather than internal faults.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NotFitted(_))
    }
}
