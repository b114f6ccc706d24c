use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {} at line {line}: {source}", path.display())]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Serde {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid class scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label:?} at line {line} is not part of the class scheme")]
    UnknownLabel { label: String, line: usize },

    #[error("class {class:?} has {size} examples, at least {needed} required")]
    ClassTooSmall {
        class: String,
        size: usize,
        needed: usize,
    },

    #[error("class {0:?} has no training examples")]
    EmptyClass(String),

    #[error("binary training needs both positive and negative examples")]
    SingleClass,

    #[error("training class {class:?}: {source}")]
    ClassTraining {
        class: String,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered during training")]
    NonFinite,

    #[error("information gain is undefined on an empty corpus")]
    EmptyCorpus,

    #[error("evaluation set is empty")]
    EmptyEvaluation,

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    /// Process exit code for this error: 2 missing input, 3 degenerate
    /// training data, 4 label mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingInput(_) => 2,
            Error::EmptyClass(_) | Error::SingleClass | Error::ClassTooSmall { .. } => 3,
            Error::ClassTraining { source, .. } => source.exit_code(),
            Error::UnknownLabel { .. } => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }
}
