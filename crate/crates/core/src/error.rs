use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller-supplied data violated a precondition (shape, sign, range).
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorization or estimator failed on otherwise valid input.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Every learning-rate candidate of a fit diverged.
    #[error("all {} candidates failed: {}", .0.len(), .0.join("; "))]
    AllCandidatesFailed(Vec<String>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Input(msg()))
    }
}
