use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("document {doc_id}: {message}")]
    InvalidDocument { doc_id: String, message: String },

    #[error("lexicon {lexicon}: {message}")]
    InvalidLexicon { lexicon: String, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("span ordering violated: antecedent {antecedent:?} does not precede mention {mention:?}")]
    Ordering {
        mention: (usize, usize),
        antecedent: (usize, usize),
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch for tensor {name}: expected {expected} values, got {actual}")]
    Shape {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged in phase {phase} epoch {epoch}: {reason}")]
    Diverged {
        phase: String,
        epoch: usize,
        reason: String,
        last_good: Box<crate::training::ParameterStore>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
