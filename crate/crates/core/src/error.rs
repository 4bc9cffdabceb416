use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("map generation failed: {0}")]
    MapGeneration(String),
    #[error("map parse error (line {line}): {message}")]
    MapParse { line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value produced during integration")]
    NonFinite,
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Reasons a single planner step can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanError {
    #[error("every sampled rollout was infeasible")]
    NoValidSample,
    #[error("forward pass produced no feasible rollout")]
    NoForwardSamples,
    #[error("backward pass produced no feasible rollout")]
    NoBackwardSamples,
    #[error("every guided candidate was infeasible")]
    AllCandidatesCollided,
}
