use std::io;

use thiserror::Error;

/// Errors raised by the tensor-train toolkit.
#[derive(Debug, Error)]
pub enum TtError {
    /// An argument lies outside the operation's domain (bad index, shape or rank).
    #[error("domain error: {0}")]
    Domain(String),

    /// Densifying would exceed the configured element budget.
    #[error("resource error: {needed} elements requested, budget is {budget}")]
    Resource { needed: u128, budget: usize },

    /// A numerical precondition does not hold (e.g. a factor is not orthonormal).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A matrix that must have full column rank is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// The solver loss blew up.
    #[error("divergence at iteration {iteration}: loss {loss:e} (initial {initial:e})")]
    Divergence { iteration: usize, loss: f64, initial: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl TtError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        TtError::Domain(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TtError::Singular(_) | TtError::Divergence { .. } | TtError::Precondition(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, TtError>;
