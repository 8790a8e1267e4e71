use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not stable: spectral radius {rho}")]
    Unstable { rho: f64 },

    #[error("system is not stabilizable: {reason}")]
    NotStabilizable { reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient empirical covariance: lambda_min = {lambda_min:e}")]
    RankDeficient { lambda_min: f64 },

    #[error("state blow-up at step {step}: |x| = {norm:e}; feedback does not stabilize the system")]
    InstabilityAbort { step: usize, norm: f64 },

    #[error("no feasible point accepted after {rejections} proposals; region may be empty or misconfigured")]
    EmptyRegion { rejections: u64 },

    #[error("no stabilizable candidate available in the feasible region")]
    SelectionFailure,

    #[error("no sample size up to {cap} satisfies the thresholds (binding inequality: {binding})")]
    SampleSizeOverflow { cap: u64, binding: &'static str },

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
