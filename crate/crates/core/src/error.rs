use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("coordinate {value} out of bounds [{min}, {max}] in dimension {dim}")]
    OutOfBounds {
        dim: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("index {index:?} is not inside a grid with shape {shape:?}")]
    IndexOutOfGrid {
        index: Vec<usize>,
        shape: Vec<usize>,
    },

    #[error("histogram input is empty")]
    EmptyInput,

    #[error("all {0} samples fall outside the grid bounds")]
    AllOutOfBounds(usize),

    #[error("high-exposure zone is empty")]
    EmptyZone,

    #[error("inputs are defined on different grids")]
    GridMismatch,

    #[error("range must be positive, got {0}")]
    NonPositiveRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("library is empty (W = 0)")]
    EmptyLibrary,

    #[error("library covers every cell; epsilon-greedy needs cells outside it")]
    LibraryCoversGrid,

    #[error("epsilon {0} outside (0, 1)")]
    EpsilonOutOfRange(f64),

    #[error("aggregate challenge mu_S is zero")]
    ZeroChallenge,

    #[error("cell {cell} has exposure and event mass but zero sampling probability")]
    SupportViolation { cell: usize },

    #[error("unsupported confidence level alpha = {0}")]
    UnsupportedAlpha(f64),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
