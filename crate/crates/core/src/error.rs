use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no pairs selected: {0}")]
    NoPairs(String),

    #[error("zero space-time lag: dependence function vanishes")]
    ZeroLag,

    #[error("grid has {points} space-time points, above the dense factorization limit of {limit}; use a smaller grid or raise the limit")]
    GridTooLarge { points: usize, limit: usize },

    #[error("covariance factorization failed: {0}")]
    Factorization(String),

    #[error("information matrix is singular (condition number {condition:e})")]
    SingularInformation { condition: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization(_) | Error::SingularInformation { .. } | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
