//! Sampling-based trajectory optimization on occupancy-grid arenas.
//!
//! The crate provides vanilla MPPI, rollout-clustering MPPI and the
//! bidirectional clustered variant (forward and backward clustered passes,
//! branch association and a guided refinement pass), together with the
//! models, constraint sets and benchmark harness used to compare them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bic;
pub mod constraints;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod closed_loop;
pub mod clustering;
pub mod mppi;
pub mod trajectory;

pub use bic::{BicConfig, BicDiagnostics, BicOutput, GuideReference, GuideWeights, Junction};
pub use closed_loop::{
    closed_loop_drive, Algorithm, BicPlanner, ClusterMppiPlanner, DriveOutcome, DriveSettings, FailureReason,
    MppiPlanner, Planner,
};
pub use clustering::{ClusterConfig, DbscanParams, FeatureScheme};
pub use constraints::{Boundary, Infeasibility, InputConstraint, StateConstraint};
pub use dynamics::{Direction, Dynamics, Model, StepSize};
pub use environment::{MapSpec, OccupancyGrid};
pub use experiment::{
    run_suite, summarize, AlgorithmSummary, ExperimentConfig, MapSource, ModelKind, SuiteOutput, SummaryReport,
    TrialResult,
};
pub use error::{Error, PlanError, Result};
pub use mppi::{Cost, CostModel, MppiConfig, NoiseSpec, PlanningContext, RolloutBatch};
pub use trajectory::{ControlSequence, StateTrajectory};
