use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One issue of an infeasible division.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueError {
    pub issue: String,
    pub requested: u32,
    pub available: u32,
}

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("out of turn: {0}")]
    TurnOrder(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("infeasible division: {0:?}")]
    InfeasibleDivision(Vec<IssueError>),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error(transparent)]
    Core(#[from] haggle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ArenaError {
    /// Stable machine-readable kind, used in response bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            ArenaError::NotFound(_) => "not_found",
            ArenaError::TurnOrder(_) => "turn_order",
            ArenaError::State(_) => "state",
            ArenaError::Precondition(_) => "precondition",
            ArenaError::Validation(_) | ArenaError::InfeasibleDivision(_) => "validation",
            ArenaError::Conflict(_) => "conflict",
            ArenaError::Core(_) | ArenaError::Io(_) => "internal",
        }
    }
}
