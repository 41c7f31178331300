use std::fmt;
use std::path::PathBuf;

/// Where in an input file a parse failure was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Byte(off) => write!(f, "byte offset {off}"),
            Location::Line(line) => write!(f, "line {line}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HdcError {
    #[error("invalid range: lo ({lo}) must be < hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid dimension: {0}")]
    InvalidDimension(usize),

    #[error("unsupported precision: {0} bits (expected 1, 2 or 3)")]
    InvalidPrecision(u8),

    #[error("component {index} has value {value}, above the {max} limit for this precision")]
    ComponentOutOfRange { index: usize, value: u8, max: u8 },

    #[error("component {index} is not finite")]
    NonFinite { index: usize },

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unknown class label {0}")]
    InvalidLabel(u32),

    #[error("cell mismatch {mismatch} outside [0, {max}]")]
    InvalidMismatch { mismatch: u32, max: u8 },

    #[error("cosine similarity is undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("{path}: parse error at {at}: {message}")]
    Parse {
        path: PathBuf,
        at: Location,
        message: String,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HdcError>;
