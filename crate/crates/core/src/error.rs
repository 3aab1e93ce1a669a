//! Crate-wide error type. Variants split along the line the CLI cares
//! about: bad input (exit 1) versus numerical failure (exit 2).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient nodes: have {have}, need at least {need}")]
    InsufficientNodes { have: usize, need: usize },

    #[error("zero weighted degree at node {0}")]
    ZeroDegree(usize),

    #[error("non-bijective permutation")]
    BadPermutation,

    #[error("length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("unstable healing step: pre-clamp h in [{min:.3}, {max:.3}] left [-1, 2]")]
    UnstableHealingStep { min: f64, max: f64 },

    #[error("conjugate gradient did not converge: residual {residual:.3e} after {iters} iterations")]
    SolveFailed { residual: f64, iters: usize },

    #[error("rollout diverged at step {0}")]
    RolloutDiverged(usize),

    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolveFailed { .. }
                | Error::RolloutDiverged(_)
                | Error::UnstableHealingStep { .. }
                | Error::NonFiniteLoss { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
