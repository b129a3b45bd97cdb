//! Error type shared across the crate.

use thiserror::Error;

/// Alias for results produced by this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by samplers, flows, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    /// A computation produced a NaN or infinity where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A matrix expected to be positive definite failed to factorize.
    #[error("matrix not positive definite in {0}")]
    NotPositiveDefinite(String),

    /// The operation needs the target's gradient but none is available.
    #[error("target `{0}` does not expose a gradient")]
    MissingGradient(String),

    /// The operation needs the target's Hessian but none is available.
    #[error("target `{0}` does not expose a Hessian")]
    MissingHessian(String),

    /// The operation needs an exact reference sampler but none is available.
    #[error("target `{0}` does not expose a reference sampler")]
    MissingSampler(String),

    /// The density-ratio bound requires normalized densities.
    #[error("`{0}` is unnormalized; density-ratio bounds need normalized densities")]
    Unnormalized(String),

    /// The proposal assigns zero mass where the target is positive.
    #[error("proposal density vanishes at {0}; target support must be contained in proposal support")]
    ZeroProposalMass(String),

    /// A finite-state chain failed to mix within the iteration cap.
    #[error("containment violation: TV distance still {tv:.3e} after {cap} steps (threshold {epsilon:.3e})")]
    ContainmentViolation { cap: usize, tv: f64, epsilon: f64 },

    /// Catch-all for invalid arguments described in the message.
    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
