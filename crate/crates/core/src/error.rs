//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A constraint set admits no feasible parameter.
    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    /// A numerical routine failed to reach its accuracy contract.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The likelihood degenerated to -inf during an E-step.
    #[error("degenerate fit at step {step}: zero likelihood for every state")]
    DegenerateFit { step: usize },

    /// Every restart of a fit failed.
    #[error("fit failed for all restarts: {diagnostics:?}")]
    FitFailure { diagnostics: Vec<String> },

    /// Every grid model failed to fit.
    #[error("selection failed: no grid model produced a fit\n{diagnostics:?}")]
    SelectionFailure { diagnostics: Vec<String> },

    /// A prediction-error summand was not finite.
    #[error("estimation error at step {step}: non-finite summand")]
    Estimation { step: usize },

    /// A truth-model description is invalid.
    #[error("invalid truth model: {0}")]
    InvalidTruth(String),

    /// Configuration file problems.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
