use thiserror::Error;

/// Errors produced by the design, synthesis and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Matrix shapes do not fit together.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input outside the domain of the operation (unstable system, bad budget, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed configuration or problem description.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// An iterative routine did not reach its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The semidefinite program has no strictly feasible point.
    #[error("infeasible: best attained minimum eigenvalue {best_min_eig:.3e}")]
    Infeasible { best_min_eig: f64 },

    /// Breakdown of a numerical kernel (singular solve, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for errors caused by the caller's input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Dimension(_) | Error::Domain(_) | Error::Invalid(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
