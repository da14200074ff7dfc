use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("propensity must lie in (0, 1], got {0}")]
    InvalidPropensity(f64),

    #[error("ideal DCG is zero; query has no graded relevance")]
    ZeroIdealDcg,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("logging policy sample is empty")]
    EmptySample,

    #[error("no client updates to aggregate")]
    NoUpdates,

    #[error("impossible observation: no click with examination and relevance both certain")]
    ImpossibleObservation,

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
