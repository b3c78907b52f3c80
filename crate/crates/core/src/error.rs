use thiserror::Error;

use crate::domain::PlanViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid phase id {0} (expected 1..=8)")]
    Phase(u8),

    #[error("empty label set")]
    EmptyLabels,

    #[error("split has an empty child")]
    EmptyChild,

    #[error("feature dimension mismatch: tree expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("infeasible barrier length {0} s")]
    InfeasibleBarrier(f64),

    #[error("invalid timing plan: {0}")]
    Plan(PlanViolation),

    #[error("simulation consistency fault: {0}")]
    Consistency(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
