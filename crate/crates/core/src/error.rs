use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error(
        "operator is not positive semi-definite: eigenvalue {eigenvalue:e} below tolerance band (largest {largest:e})"
    )]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("operator has no eigenvalue above the inversion threshold")]
    RankZeroOperator,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("too few samples: need at least {required}, found {found}")]
    TooFewSamples { required: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample is empty")]
    EmptySample,

    #[error("too few curves: need at least {required}, found {found}")]
    TooFewCurves { required: usize, found: usize },

    #[error("curve level {0} is not declared in the model specification")]
    UnknownLevel(String),

    #[error("penalized normal equations are ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("kernel matrix is not positive semi-definite: {0}")]
    InvalidKernel(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}
