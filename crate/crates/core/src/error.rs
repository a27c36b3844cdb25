use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("reduction over an empty tensor")]
    EmptyReduction,

    #[error("{op}: wrong number of operands")]
    Arity { op: &'static str },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("non-finite value in `{name}` at index {index}")]
    NonFinite { name: String, index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what}: sequence of length {got} is shorter than required {needed}")]
    SequenceTooShort {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,

    #[error("concordance undefined: zero denominator")]
    ZeroDenominator,

    #[error("{what}: length mismatch, expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("{path}:{line}: {kind}")]
    Parse {
        path: PathBuf,
        line: usize,
        kind: ParseErrorKind,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("checkpoint/config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("cannot form {folds} speaker-disjoint folds from {groups} speaker groups")]
    TooFewGroups { groups: usize, folds: usize },

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("ragged row: expected {expected} values, got {got}")]
    RaggedRow { expected: usize, got: usize },
    #[error("non-finite value in column `{0}`")]
    NonFiniteValue(String),
    #[error("cannot parse `{0}` as a number")]
    BadNumber(String),
    #[error("frame index {got} where {expected} was expected")]
    FrameIndex { expected: usize, got: String },
    #[error("empty file")]
    Empty,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
