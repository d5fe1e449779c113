use thiserror::Error;

#[derive(Debug, Error)]
pub enum FunmixError {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("grid point {point} lies outside the basis domain [{lo}, {hi}]")]
    OutOfDomain { point: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite value at iteration {iteration} in block `{block}`")]
    NonFinite { iteration: usize, block: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("chain contains no draws")]
    EmptyChain,

    #[error("data mismatch: {0}")]
    DataMismatch(String),
}

pub type Result<T> = std::result::Result<T, FunmixError>;
