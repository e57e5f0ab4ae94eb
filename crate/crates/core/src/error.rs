use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty corpus after filtering")]
    EmptyCorpus,

    #[error("temporal split needs at least 3 sessions, found {0}")]
    TooFewSessions(usize),

    #[error("unknown feature id `{0}`")]
    UnknownFeature(String),

    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),

    #[error("{what} missing ({file}); run the `{stage}` stage first")]
    MissingStage {
        stage: &'static str,
        what: String,
        file: String,
    },

    #[error("incomplete run, missing: {}", .0.join(", "))]
    IncompleteRun(Vec<String>),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("backend exhausted: {0}")]
    BackendExhausted(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
