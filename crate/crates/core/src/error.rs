use thiserror::Error;

/// Errors reported by the analysis and simulation routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameter violates a structural precondition.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// The requested quantity does not exist in this parameter regime.
    #[error("regime error: {0}")]
    Regime(String),

    /// An iteration failed to converge.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Floating-point evaluation lost too much precision to be trusted.
    #[error("numeric instability: {0}")]
    Numeric(String),

    /// A discretized linear system could not be solved.
    #[error("singular system: {0}")]
    Singular(String),

    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature failure: {0}")]
    Quadrature(String),
}

pub type Result<T> = std::result::Result<T, Error>;
