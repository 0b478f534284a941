use thiserror::Error;

use crate::potential::PhaseState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input error: {0}")]
    Input(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("structural error: {0}")]
    Structural(String),
    #[error("spectral error: {0}")]
    Spectral(String),
    #[error("numerical blow-up at t={time}: state {state:?}")]
    BlowUp { time: f64, state: PhaseState },
    #[error("flow did not settle within t={max_time} (last state {state:?})")]
    NonConvergence { max_time: f64, state: PhaseState },
    #[error("classification error: {0}")]
    Classification(String),
    #[error("quadrature accuracy error: {0}")]
    Accuracy(String),
    #[error("generator contract violated: {0}")]
    Contract(String),
    #[error("estimation failure: {0}")]
    Estimation(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("division by zero: {0}")]
    Division(String),
    #[error("construction error: {0}")]
    Construction(String),
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
