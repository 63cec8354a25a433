use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: missing or empty field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("unknown relevance label {0:?}")]
    UnknownLabel(String),

    #[error("relevance value {0} is outside 0..=3")]
    LabelValueOutOfRange(i64),

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("score for {id:?} is not numeric: {value}")]
    NonNumericScore { id: String, value: String },

    #[error("score for {id:?} is not finite")]
    NonFiniteScore { id: String },

    #[error("no score for record {0:?}")]
    MissingScore(String),

    #[error("record {0:?} has no gold label")]
    MissingGoldLabel(String),

    #[error("unknown concept {0:?}")]
    UnknownConcept(String),

    #[error("concept {0:?} has no category")]
    MissingCategory(String),

    #[error("category {value} for concept {concept:?} is outside 0..=3")]
    InvalidCategory { concept: String, value: i64 },

    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("score tables cover different ids (first difference: {0:?})")]
    IdSetMismatch(String),

    #[error("incomplete run grid, missing cells: {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),

    #[error("duplicate run for cell {0}")]
    DuplicateRun(String),

    #[error("no training example with label {0:?}")]
    EmptyLabelClass(String),

    #[error("unresolved template placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("response carries no token probabilities")]
    MissingLogprobs,

    #[error("unusable response: no probability mass on any label")]
    UnusableResponse,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
