use thiserror::Error;

/// Errors produced anywhere in the resampling pipeline.
#[derive(Debug, Error)]
pub enum BootError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("cholesky factorization failed at row {row}")]
    FactorizationFailure { row: usize },

    #[error("{failed} of {attempted} bootstrap replicates failed (budget {budget})")]
    ReplicateFailure {
        failed: usize,
        attempted: usize,
        budget: usize,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BootError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        BootError::InvalidInput(msg.into())
    }

    /// True for failures that come from numerics rather than from bad arguments.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            BootError::DegenerateSample(_)
                | BootError::DegenerateCovariance(_)
                | BootError::FactorizationFailure { .. }
                | BootError::ReplicateFailure { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, BootError>;
