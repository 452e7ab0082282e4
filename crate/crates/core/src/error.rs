use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("an ensemble needs at least 2 members, got {0}")]
    Size(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("input contains a non-finite entry")]
    NonFinite,
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailure,
    #[error("innovation covariance could not be factorized")]
    Singular,
    #[error("inflation factor must be >= 1, got {0}")]
    InvalidInflation(f64),
    #[error("state dimension {m} exceeds the covariance-form capacity {capacity}")]
    Capacity { m: usize, capacity: usize },
    #[error("non-finite state produced by the flow (member {member:?})")]
    NonFiniteState { member: Option<usize> },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("bound rate is not contracting (theta = {0})")]
    NotContracting(f64),
}
