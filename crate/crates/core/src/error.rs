use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension {dim} exceeds the dense cap of {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("ZeroGradient: gradient norm {norm:e} is at or below the floor {floor:e}")]
    ZeroGradient { norm: f64, floor: f64 },

    #[error("IndefiniteOperator: non-positive curvature persisted up to lambda = {lambda:e}")]
    IndefiniteOperator { lambda: f64 },

    #[error("NonFiniteValue: {0}")]
    NonFiniteValue(&'static str),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("polynomial format error at term {term}: {msg}")]
    TermFormat { term: usize, msg: String },

    #[error("polynomial format error at line {line}, column {column}: {msg}")]
    SyntaxFormat {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroGradient { .. }
                | Error::IndefiniteOperator { .. }
                | Error::NonFiniteValue(_)
                | Error::Singular(_)
        )
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
