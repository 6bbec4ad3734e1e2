use thiserror::Error;

/// Errors raised across the navigation stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("malformed plan: STOP at position {0} before the end")]
    MalformedPlan(usize),
    #[error("invalid goal ({0}, {1}): cell is blocked or out of bounds")]
    InvalidGoal(i32, i32),
    #[error("goal unreachable from ({0}, {1})")]
    Unreachable(i32, i32),
    #[error("unknown instruction token id {0}")]
    UnknownToken(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("group too small: need at least 2 trajectories, got {0}")]
    GroupTooSmall(usize),
    #[error("recorded logits disagree with the old-policy snapshot (max diff {0:e})")]
    SnapshotMismatch(f64),
    #[error("probe trajectory is not a failure")]
    NotAFailure,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checksum mismatch")]
    Checksum,
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
