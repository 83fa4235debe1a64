use thiserror::Error;

/// Errors raised by the filters, samplers and the enumeration oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate filter at time {time}: every particle weight is zero")]
    DegenerateFilter { time: usize },

    #[error("conditioning impossible at time {time}: the reference path has zero weight")]
    ConditioningImpossible { time: usize },

    #[error("backward sampling inconsistency at time {time}: every backward weight is zero")]
    BackwardInconsistent { time: usize },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("enumeration over {paths} paths exceeds the limit of {limit}")]
    TooLarge { paths: f64, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
