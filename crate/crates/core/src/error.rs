use std::fmt;

use thiserror::Error;

/// Identifies which oracle of a problem produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleId {
    Objective,
    Inequality(usize),
    Equality,
    /// A bare scalar field evaluated outside of a problem.
    Field,
}

impl fmt::Display for OracleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleId::Objective => write!(f, "objective"),
            OracleId::Inequality(i) => write!(f, "inequality #{i}"),
            OracleId::Equality => write!(f, "equality system"),
            OracleId::Field => write!(f, "scalar field"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{oracle} returned a non-finite value at t = {t}")]
    NonFinite { oracle: OracleId, t: f64 },

    #[error("singular system: pivot {pivot:e} at index {index}")]
    SingularSystem { index: usize, pivot: f64 },

    #[error("constraint {index} left the barrier domain (residual {psi:e})")]
    DomainViolation { index: usize, psi: f64 },

    #[error("step failure at t = {t}: no interior point after {backtracks} backtracks")]
    StepFailure { t: f64, backtracks: usize },

    #[error("oracle failure: {0}")]
    OracleFailure(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("collision at t = {t}: margin {margin:e}")]
    Collision { t: f64, margin: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite { .. } => "non_finite",
            Error::SingularSystem { .. } => "singular_system",
            Error::DomainViolation { .. } => "domain_violation",
            Error::StepFailure { .. } => "step_failure",
            Error::OracleFailure(_) => "oracle_failure",
            Error::Geometry(_) => "geometry",
            Error::Collision { .. } => "collision",
            Error::InvalidInput(_) => "invalid_input",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
