use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("duplicate id `{0}` within split")]
    DuplicateId(String),

    #[error("empty field `{field}` in row with id `{id}`")]
    EmptyField { id: String, field: &'static str },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("id `{0}` appears in more than one split")]
    SplitOverlap(String),

    #[error("sample size {requested} out of range 1..={available}")]
    SampleSize { requested: usize, available: usize },

    #[error("vocab size {0} below minimum of 259")]
    VocabTooSmall(usize),

    #[error("unknown token id {0}")]
    UnknownToken(u32),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward called on a graph that was already consumed")]
    GraphConsumed,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("cross-entropy mask selects no positions")]
    EmptyMask,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("step {step} out of schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("malformed scorer output: {0}")]
    MalformedScorerOutput(String),

    #[error("external scorer failed: {0}")]
    ScorerFailed(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {0} candidates vs {1} references")]
    LengthMismatch(usize, usize),

    #[error("{0}")]
    Usage(String),

    #[error("trial failed: {0}")]
    Trial(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
