use thiserror::Error;

use crate::dsl::{CandidateMode, DslError, EvalError};
use crate::dynamics::DynamicsError;
use crate::matrix::MatrixError;
use crate::sampling::DomainError;

/// Errors raised by the analysis routines before any verdict is reached.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("candidate mode {found:?} cannot be used here (expected {expected})")]
    WrongMode {
        expected: &'static str,
        found: CandidateMode,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
