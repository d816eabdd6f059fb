use thiserror::Error;

/// Errors produced by the solvers and optimizers in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The closed loop is not stable in the relevant time domain. `metric` is the
    /// spectral radius (discrete) or the largest real part of an eigenvalue (continuous).
    #[error("closed loop is not stable (stability metric {metric:.6})")]
    Unstable { metric: f64 },

    /// The gain violates the H-infinity constraint, i.e. the attenuation Riccati
    /// equation has no admissible stabilizing solution. `margin` is the last
    /// observed certificate margin before the solve was abandoned.
    #[error("infeasible: {reason} (last margin {margin:.3e})")]
    Infeasible { reason: String, margin: f64 },

    #[error("no convergence after {iterations} iterations (last change {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("no feasible initial gain found in {tries} draws")]
    SearchFailed { tries: usize },

    #[error("H-infinity bracket expansion exceeded {bound:e}")]
    Overflow { bound: f64 },

    #[error("estimation failure: {0}")]
    Estimation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn infeasible(reason: impl Into<String>, margin: f64) -> Self {
        Error::Infeasible {
            reason: reason.into(),
            margin,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
