use thiserror::Error;

/// Failures reported by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {0:?} is not interior to the chart")]
    NotInterior(Vec<f64>),
    #[error("metric is not positive definite at {0:?}")]
    NotPositiveDefinite(Vec<f64>),
    #[error("differential vanishes at {0:?}")]
    VanishingDifferential(Vec<f64>),
    #[error("field is complex valued where a real field is required")]
    ComplexField,
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("point {0:?} lies outside the weight domain")]
    OutsideDomain(Vec<f64>),
    #[error("degenerate parametrization: {0}")]
    Degenerate(String),
    #[error("geodesic did not exit within the step budget")]
    Trapped,
    #[error("initial direction is not inward pointing")]
    OutwardDirection,
    #[error("conjugate point detected: {0}")]
    ConjugatePoint(String),
    #[error("refinement check failed: {0}")]
    Refinement(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("iteration did not converge: {0}")]
    NonConvergence(String),
    #[error("ill-conditioned fit (condition number {0:e})")]
    IllConditioned(f64),
    #[error("cache format error: {0}")]
    Cache(String),
    #[error("normalization not satisfied: {0}")]
    NotNormalized(String),
}

pub type Result<T> = std::result::Result<T, Error>;
