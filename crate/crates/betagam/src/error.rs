//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least {needed} distinct covariate values, found {found}")]
    TooFewDistinctValues { needed: usize, found: usize },

    #[error("inner knots collide at the requested quantiles; reduce inner_count")]
    CoincidentKnots,

    #[error("penalty order {order} must satisfy 1 <= d < {size} (basis size)")]
    InvalidPenaltyOrder { order: usize, size: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("all states carry zero probability at t = {t}; check data clipping")]
    ImpossibleObservation { t: usize },

    #[error("log-likelihood became non-finite during fitting")]
    NonFiniteLikelihood,

    #[error("all {0} random starts failed")]
    AllStartsFailed(usize),

    #[error("every grid cell was flagged as degenerate or failed to converge")]
    AllCellsDegenerate,

    #[error("only {valid} of {total} bootstrap replicates were valid, need {needed}")]
    TooFewValidReplicates {
        valid: usize,
        total: usize,
        needed: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
