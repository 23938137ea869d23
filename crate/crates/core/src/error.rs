use thiserror::Error;

/// Errors raised by the tomography, geometry and averaging routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension {0}: at least 2 required")]
    InvalidDimension(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("vector is not normalized (squared norm {0})")]
    NotNormalized(f64),

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("post-selection component {index} vanishes (|b_i| = {modulus:e})")]
    ZeroComponent { index: usize, modulus: f64 },

    #[error("index {index} out of range 0..{bound}")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("post-selection is (nearly) orthogonal to the state: |<b|psi>| = {0:e}")]
    SingularPostSelection(f64),

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    #[error("weak values violate sum rule: |sum - 1| = {0:e}")]
    InconsistentWeakValues(f64),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("division by zero at component {index}")]
    DivisionByZero { index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("finite-difference step adjustment failed in direction {direction}")]
    StepAdjustment { direction: usize },

    #[error("basis is not orthonormal (max Gram deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("invalid simplex weights: {0}")]
    InvalidWeights(String),

    #[error("initial point must lie strictly inside the simplex")]
    InvalidInit,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("quadrature did not reach tolerance {tolerance:e} (estimate {estimate:e})")]
    Quadrature { tolerance: f64, estimate: f64 },

    #[error("all {0} Monte Carlo samples were rejected")]
    NoAcceptedSamples(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical check failed: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
