use thiserror::Error;

/// Errors raised by system construction, stepping and the experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("mass matrix is not symmetric positive definite")]
    MassNotPositiveDefinite,

    /// The constraint Gram matrix `μ M⁻¹ μᵀ` is singular or indefinite.
    #[error("constraint Gram matrix is not regular (eigenvalue ratio {ratio:e})")]
    NonRegular { ratio: f64 },

    #[error("constraint forms lose rank: smallest/largest singular value {ratio:e}")]
    RankDeficient { ratio: f64 },

    #[error("potential gradient disagrees with finite differences (relative error {rel_error:e})")]
    GradientMismatch { rel_error: f64 },

    /// `β + β′` too close to one half: the multiplier columns of the
    /// Jacobian become nearly proportional.
    #[error("ill-conditioned parameters: beta + beta' = {sum} is within 1e-9 of 1/2")]
    IllConditioned { sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian in newton iteration")]
    SingularJacobian,

    #[error("rejection sampling failed after {draws} draws")]
    SamplingFailed { draws: usize },

    #[error("solver failed at step {step}: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
