use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no records supplied")]
    EmptyInput,
    #[error("record {row}: expected {expected} covariates, found {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("record {row}: treatment indicator {value} is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("degenerate arm: {treated} treated and {controls} control units")]
    DegenerateArm { treated: usize, controls: usize },
    #[error("non-finite value in {field} at position {index}")]
    NonFinite { field: &'static str, index: usize },
    #[error("index {index} out of range for {len} units")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Newton-Raphson did not converge in {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("perfect separation detected in the logistic fit")]
    Separation,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("no multistart search reduced the score objective")]
    NoDescent,
    #[error("fitted propensity {propensity} at unit {index} is within 1e-12 of 0 or 1")]
    NumericalOverflow { index: usize, propensity: f64 },
    #[error("matching needs {needed} controls but only {available} exist")]
    InsufficientControls { needed: usize, available: usize },

    #[error("all {failed} bootstrap replicates failed")]
    AllReplicatesFailed { failed: usize },
    #[error("{failed} of {total} replicates failed (limit 5%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

impl Error {
    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Separation
                | Error::RankDeficient
                | Error::NoDescent
                | Error::NumericalOverflow { .. }
                | Error::AllReplicatesFailed { .. }
                | Error::TooManyFailures { .. }
        )
    }
}
