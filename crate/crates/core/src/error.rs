use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures of the embedding / checkpoint / dataset file formats.
///
/// Each variant maps to its own process exit code (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("row count mismatch: matrix has {matrix} rows, labels have {labels}")]
    RowCountMismatch { matrix: usize, labels: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("malformed labels file: {0}")]
    Labels(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index ({i}, {j}) out of range for n = {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("grid is not balanced and complete: {0}")]
    BalanceViolation(String),
    #[error("combination ({0}, {1}) has no samples")]
    IncompleteSplit(usize, usize),
    #[error("observed combinations do not connect all concept values; factors are unidentifiable")]
    Unidentifiable,
    #[error("at least two combinations per value are required, got k = {0}")]
    InsufficientCombinations(usize),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },
    #[error("embeddings have zero total variance")]
    DegenerateVariance,
    #[error("concept {concept} value {index} has a zero-norm vector")]
    DegenerateVector { concept: usize, index: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for this error kind.
    pub fn code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) => 2,
            Error::InvalidInput(_) | Error::DimensionMismatch { .. } => 3,
            Error::IndexOutOfRange { .. } => 4,
            Error::BalanceViolation(_) => 5,
            Error::IncompleteSplit(..) => 6,
            Error::Unidentifiable => 7,
            Error::InsufficientCombinations(_) => 8,
            Error::TrainingDiverged { .. } => 9,
            Error::DegenerateVariance | Error::DegenerateVector { .. } => 10,
            Error::Format(f) => match f {
                FormatError::BadMagic { .. } => 20,
                FormatError::BadVersion { .. } => 21,
                FormatError::Corrupt(_) => 22,
                FormatError::RowCountMismatch { .. } => 23,
                FormatError::NonFinite { .. } => 24,
                FormatError::Labels(_) => 25,
            },
            Error::Io { .. } => 30,
            Error::Csv(_) | Error::Json(_) => 31,
            Error::Config(_) => 32,
        }
    }
}
