use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid sentence: {0}")]
    InvalidSentence(String),
    #[error("unknown language tag `{0}`")]
    UnknownLanguage(String),
    #[error("degenerate (zero) embedding")]
    DegenerateEmbedding,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("context of length {len} exceeds the {max} positions the model supports")]
    ContextOverflow { len: usize, max: usize },
    #[error("timestep {t} outside [0, {t_train})")]
    BadTimestep { t: usize, t_train: usize },
    #[error("document `{0}` has no sentences after segmentation")]
    EmptyDocument(String),
    #[error("malformed conversation: {0}")]
    MalformedConversation(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("batch has no predictable positions")]
    NoPredictablePositions,
    #[error("corpus produced no batches")]
    EmptyCorpus,
    #[error("cannot resume: {0}")]
    ResumeMismatch(String),
    #[error("evaluation set is empty: {0}")]
    EmptyEvalSet(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Errors that stem from user input rather than from a failing run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownLanguage(_) | Error::ResumeMismatch(_)
        )
    }
}
