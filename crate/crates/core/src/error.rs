use thiserror::Error;

use crate::scalar::Scalar;
use crate::solver::FusionSolution;

/// Best iterate available when an iterative method stops early.
#[derive(Debug, Clone)]
pub enum BestIterate<T: Scalar> {
    Point(Vec<T>),
    Fused(Box<FusionSolution<T>>),
}

#[derive(Debug, Error)]
pub enum Error<T: Scalar = f64> {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("grid of {cells} cells exceeds the budget of {budget}")]
    Budget { cells: u128, budget: u128 },

    #[error("{context} did not converge within {iterations} iterations (residual {residual})")]
    NotConverged {
        context: &'static str,
        iterations: usize,
        residual: T,
        best: BestIterate<T>,
    },
}

impl<T: Scalar> Error<T> {
    pub fn is_convergence_failure(&self) -> bool {
        matches!(self, Error::NotConverged { .. })
    }
}

pub type Result<V, T = f64> = std::result::Result<V, Error<T>>;

pub(crate) fn shape_err<T: Scalar>(msg: impl Into<String>) -> Error<T> {
    Error::Shape(msg.into())
}

pub(crate) fn param_err<T: Scalar>(msg: impl Into<String>) -> Error<T> {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn input_err<T: Scalar>(msg: impl Into<String>) -> Error<T> {
    Error::InvalidInput(msg.into())
}
