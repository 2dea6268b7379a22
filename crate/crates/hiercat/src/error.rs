//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("subordinate `{sub}` is mapped to two distinct basics: `{first}` and `{second}`")]
    ConflictingParent {
        sub: String,
        first: String,
        second: String,
    },
    #[error("input is empty")]
    EmptyInput,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("subordinate `{sub}` has {available} stimuli, need more than {requested} to hold out")]
    InsufficientStimuli {
        sub: String,
        available: usize,
        requested: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("label/head mismatch: {0}")]
    LabelHeadMismatch(String),
    #[error("divergence detected: non-finite loss at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("zero variance in {0} vector, correlation undefined")]
    ZeroVariance(&'static str),
    #[error("cluster count {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("degenerate rank: fewer than {requested} non-zero principal components")]
    DegenerateRank { requested: usize },
    #[error("concept template needs at least one example")]
    EmptyExamples,
    #[error("probability vector contains a non-positive entry: {0}")]
    NonPositiveEntry(f64),
    #[error("no basic category in the pool has at least {min_subs} subordinates")]
    NoEligibleBasic { min_subs: usize },
    #[error("pool too small: {0}")]
    InsufficientPool(String),
    #[error("experiment needs at least one trial per condition")]
    EmptyExperiment,
    #[error("gold similarity file required but not configured")]
    MissingGold,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 invalid config, 3 runtime/numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::Io { .. } | Error::Parse { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
