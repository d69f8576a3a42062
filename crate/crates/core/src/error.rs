use thiserror::Error;

use crate::dodd::DoddFactors;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid train: {0}")]
    InvalidTrain(String),

    #[error("dimension mismatch: {0}")]
    DimensionError(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("numerical error: {0}")]
    NumericalError(String),

    #[error("no PSD pair of weighted slice sums found after {attempts} attempts")]
    PsdSearchFailed { attempts: usize },

    #[error("inner product {value:.3e} at ({row}, {col}) is below the genericity threshold")]
    DegenerateInnerProduct { row: usize, col: usize, value: f64 },

    #[error("detected rank is zero, nothing to decompose")]
    EmptyDecomposition,

    #[error("contraction with generic vectors stayed numerically zero after {attempts} draws")]
    DegenerateContraction { attempts: usize },

    #[error("symmetrizer system has trivial nullspace (smallest singular value ratio {ratio:.3e})")]
    NoSymmetrizer { ratio: f64 },

    #[error("kernel completion is ambiguous: {0}")]
    CompletionAmbiguous(String),

    #[error("decomposition failed: {0}")]
    DecompositionFailed(String),

    #[error("inflation size {d} is smaller than the block {m}x{n}")]
    InvalidInflation { d: usize, m: usize, n: usize },

    #[error("matrix has a zero entry at ({row}, {col})")]
    ZeroEntry { row: usize, col: usize },

    #[error("solver did not converge after {} iterations", .0.iterations)]
    NotConverged(Box<DoddFactors>),

    #[error("starting matrix has a zero row {row}")]
    DegenerateStart { row: usize },

    #[error("diagonal scaling became singular at index {index}")]
    SingularScaling { index: usize },

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Bad input files, malformed JSON or invalid configuration, as opposed
    /// to a solver that ran and failed.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Json(_) | Error::InvalidConfig(_))
    }

    /// Stable machine-readable code, used by the CLI and the harness CSV.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidTrain(_) => "InvalidTrain",
            Error::DimensionError(_) => "DimensionError",
            Error::DivisionByZero(_) => "DivisionByZero",
            Error::NumericalError(_) => "NumericalError",
            Error::PsdSearchFailed { .. } => "PsdSearchFailed",
            Error::DegenerateInnerProduct { .. } => "DegenerateInnerProduct",
            Error::EmptyDecomposition => "EmptyDecomposition",
            Error::DegenerateContraction { .. } => "DegenerateContraction",
            Error::NoSymmetrizer { .. } => "NoSymmetrizer",
            Error::CompletionAmbiguous(_) => "CompletionAmbiguous",
            Error::DecompositionFailed(_) => "DecompositionFailed",
            Error::InvalidInflation { .. } => "InvalidInflation",
            Error::ZeroEntry { .. } => "ZeroEntry",
            Error::NotConverged(_) => "NotConverged",
            Error::DegenerateStart { .. } => "DegenerateStart",
            Error::SingularScaling { .. } => "SingularScaling",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
