use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("triple references unknown entity `{0}`")]
    DanglingEntity(String),
    #[error("self loop on entity `{0}`")]
    SelfLoop(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(String),
    #[error("no valid negative corruption for ({0})")]
    NoNegativeAvailable(String),
    #[error("invalid multi-hop depth {0} (expected 1..=4)")]
    InvalidDepth(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("non-finite gradient in block `{0}`")]
    NonFiniteGradient(String),
    #[error("attention requested for a node without neighbors")]
    IsolatedNode,
    #[error("{states} node states for {nodes} graph nodes")]
    MissingState { states: usize, nodes: usize },
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("empty tag list")]
    EmptyTagList,

    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },

    #[error("vector store is empty")]
    EmptyStore,
    #[error("index is empty")]
    EmptyIndex,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no latency samples recorded")]
    NoSamples,
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("fewer than 3 users ({0})")]
    TooFewUsers(usize),
    #[error("ground truth is empty")]
    EmptyTruth,
    #[error("no queries")]
    NoQueries,
    #[error("empty column")]
    EmptyColumn,

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable variant name, used for machine-parsable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DanglingEntity(_) => "DanglingEntity",
            Error::SelfLoop(_) => "SelfLoop",
            Error::UnknownEntity(_) => "UnknownEntity",
            Error::UnknownRelation(_) => "UnknownRelation",
            Error::DuplicateEntity(_) => "DuplicateEntity",
            Error::NoNegativeAvailable(_) => "NoNegativeAvailable",
            Error::InvalidDepth(_) => "InvalidDepth",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::NonFiniteGradient(_) => "NonFiniteGradient",
            Error::IsolatedNode => "IsolatedNode",
            Error::MissingState { .. } => "MissingState",
            Error::EmptyText => "EmptyText",
            Error::EmptyTagList => "EmptyTagList",
            Error::EmptyBatch => "EmptyBatch",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::DivergedLoss { .. } => "DivergedLoss",
            Error::EmptyStore => "EmptyStore",
            Error::EmptyIndex => "EmptyIndex",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NoSamples => "NoSamples",
            Error::CorruptSnapshot(_) => "CorruptSnapshot",
            Error::TooFewUsers(_) => "TooFewUsers",
            Error::EmptyTruth => "EmptyTruth",
            Error::NoQueries => "NoQueries",
            Error::EmptyColumn => "EmptyColumn",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse { .. } => "ParseError",
            Error::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
