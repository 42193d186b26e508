use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("infeasible move from location {from} to location {to}")]
    InfeasibleMove { from: usize, to: usize },

    #[error("state space has {size} states, above the cap of {cap}; use Monte-Carlo mode")]
    SizeLimit { size: u128, cap: u128 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("horizon of {t_max} steps too short: d(t_max) = {last:e} is above {eps:e}")]
    HorizonTooShort {
        t_max: usize,
        last: f64,
        eps: f64,
        curve: Vec<f64>,
    },

    #[error("outside the proven regime: {0}")]
    OutOfScope(String),

    #[error("coupling does not contract on pair ({x}) -> ({y}): ratio {ratio}")]
    ContractionViolated { x: String, y: String, ratio: f64 },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
