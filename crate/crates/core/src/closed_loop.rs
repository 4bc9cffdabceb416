//! Receding-horizon execution: plan, apply the first input, repeat.

use std::time::Instant;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::bic::{bic_mppi_step, BicConfig, BicDiagnostics};
use crate::clustering::{cluster_mppi_step, ClusterConfig};
use crate::constraints::Infeasibility;
use crate::dynamics::{rk4_forward, Dynamics};
use crate::error::{Error, PlanError, Result};
use crate::mppi::{derive_seed, vanilla_mppi_step, warm_start_shift_with, CostModel, MppiConfig, PlanningContext};
use crate::trajectory::{ControlSequence, StateTrajectory};

/// Which optimizer drives the loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mppi,
    ClusterMppi,
    BicMppi,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mppi => "mppi",
            Algorithm::ClusterMppi => "cluster-mppi",
            Algorithm::BicMppi => "bic-mppi",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mppi" => Ok(Algorithm::Mppi),
            "cluster-mppi" | "cluster_mppi" => Ok(Algorithm::ClusterMppi),
            "bic-mppi" | "bic_mppi" => Ok(Algorithm::BicMppi),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// A stateful receding-horizon optimizer. On success the planner updates
/// its own warm start; on failure it is left untouched.
pub trait Planner<M: Dynamics> {
    fn plan(&mut self, ctx: &PlanningContext<M>, state: &[f64], seed: u64) -> Result<ControlSequence>;

    /// Drops the warm start in favour of the rest input. Called before a
    /// retry, since a warm start that left no feasible sample tends to do
    /// so again.
    fn reset(&mut self, ctx: &PlanningContext<M>);
}

fn rest_sequence<M: Dynamics>(ctx: &PlanningContext<M>, horizon: usize) -> ControlSequence {
    let mut rest = ctx.model.rest_input();
    ctx.input_constraint.project_in_place(&mut rest);
    ControlSequence::constant(horizon, &rest)
}

fn shift<M: Dynamics>(ctx: &PlanningContext<M>, u: &ControlSequence) -> ControlSequence {
    warm_start_shift_with(u, &ctx.model.rest_input(), &ctx.input_constraint)
}

pub struct MppiPlanner {
    pub config: MppiConfig,
    pub cost: CostModel,
    warm: ControlSequence,
}

impl MppiPlanner {
    pub fn new<M: Dynamics>(ctx: &PlanningContext<M>, config: MppiConfig, cost: CostModel, horizon: usize) -> Self {
        Self {
            config,
            cost,
            warm: rest_sequence(ctx, horizon),
        }
    }
}

impl<M: Dynamics> Planner<M> for MppiPlanner {
    fn plan(&mut self, ctx: &PlanningContext<M>, state: &[f64], seed: u64) -> Result<ControlSequence> {
        let u = vanilla_mppi_step(ctx, &self.warm, state, &self.config, &self.cost, seed)?;
        self.warm = shift(ctx, &u);
        Ok(u)
    }

    fn reset(&mut self, ctx: &PlanningContext<M>) {
        self.warm = rest_sequence(ctx, self.warm.horizon());
    }
}

pub struct ClusterMppiPlanner {
    pub config: ClusterConfig,
    pub cost: CostModel,
    warm: ControlSequence,
}

impl ClusterMppiPlanner {
    pub fn new<M: Dynamics>(
        ctx: &PlanningContext<M>,
        config: ClusterConfig,
        cost: CostModel,
        horizon: usize,
    ) -> Self {
        Self {
            config,
            cost,
            warm: rest_sequence(ctx, horizon),
        }
    }
}

impl<M: Dynamics> Planner<M> for ClusterMppiPlanner {
    fn plan(&mut self, ctx: &PlanningContext<M>, state: &[f64], seed: u64) -> Result<ControlSequence> {
        let u = cluster_mppi_step(ctx, &self.warm, state, &self.config, &self.cost, seed)?;
        self.warm = shift(ctx, &u);
        Ok(u)
    }

    fn reset(&mut self, ctx: &PlanningContext<M>) {
        self.warm = rest_sequence(ctx, self.warm.horizon());
    }
}

pub struct BicPlanner {
    pub config: BicConfig,
    pub cost: CostModel,
    goal: Vec<f64>,
    forward_warm: ControlSequence,
    backward_warm: ControlSequence,
    last: Option<BicDiagnostics>,
}

impl BicPlanner {
    pub fn new<M: Dynamics>(
        ctx: &PlanningContext<M>,
        config: BicConfig,
        cost: CostModel,
        goal: Vec<f64>,
        horizon_f: usize,
        horizon_b: usize,
    ) -> Self {
        Self {
            config,
            cost,
            goal,
            forward_warm: rest_sequence(ctx, horizon_f),
            backward_warm: rest_sequence(ctx, horizon_b),
            last: None,
        }
    }

    /// Diagnostics of the most recent successful step.
    pub fn last_diagnostics(&self) -> Option<&BicDiagnostics> {
        self.last.as_ref()
    }
}

impl<M: Dynamics> Planner<M> for BicPlanner {
    fn plan(&mut self, ctx: &PlanningContext<M>, state: &[f64], seed: u64) -> Result<ControlSequence> {
        let out = bic_mppi_step(
            ctx,
            &self.forward_warm,
            &self.backward_warm,
            state,
            &self.goal,
            &self.config,
            &self.cost,
            seed,
        )?;
        self.forward_warm = shift(ctx, &out.controls);
        self.backward_warm = out.backward_controls;
        self.last = Some(out.diagnostics);
        Ok(out.controls)
    }

    fn reset(&mut self, ctx: &PlanningContext<M>) {
        self.forward_warm = rest_sequence(ctx, self.forward_warm.horizon());
        self.backward_warm = rest_sequence(ctx, self.backward_warm.horizon());
    }
}

/// Why a closed-loop run did not reach the goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    Collision,
    MaxIterations,
    NoValidSample,
    NoForwardSamples,
    NoBackwardSamples,
    AllCandidatesCollided,
    NumericError,
}

impl From<PlanError> for FailureReason {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::NoValidSample => FailureReason::NoValidSample,
            PlanError::NoForwardSamples => FailureReason::NoForwardSamples,
            PlanError::NoBackwardSamples => FailureReason::NoBackwardSamples,
            PlanError::AllCandidatesCollided => FailureReason::AllCandidatesCollided,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriveSettings {
    pub max_iters: usize,
    /// Success radius on the position error.
    pub tolerance: f64,
    /// Extra attempts after a failed planner step, each from a reset warm
    /// start and with a fresh seed.
    pub max_retries: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct DriveOutcome {
    pub success: bool,
    /// Planner steps applied to the robot.
    pub iterations: usize,
    pub wall_time_s: f64,
    pub terminal_error: f64,
    pub failure: Option<FailureReason>,
    /// Executed states, `iterations + 1` of them.
    pub states: StateTrajectory,
}

fn position_error<M: Dynamics>(model: &M, x: &[f64], goal: &[f64]) -> f64 {
    model
        .position(x)
        .iter()
        .zip(model.position(goal))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Runs `planner` from `x_init` until the position error drops below the
/// tolerance, the robot collides, planning fails or the budget runs out.
pub fn closed_loop_drive<M: Dynamics>(
    planner: &mut dyn Planner<M>,
    ctx: &PlanningContext<M>,
    x_init: &[f64],
    x_goal: &[f64],
    settings: &DriveSettings,
) -> Result<DriveOutcome> {
    let n = ctx.model.state_dim();
    if x_init.len() != n || x_goal.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: if x_init.len() != n { x_init.len() } else { x_goal.len() },
        });
    }
    let clock = Instant::now();
    let mut x = x_init.to_vec();
    let mut states = StateTrajectory::from_raw(n, x.clone());
    let mut failure = None;
    let mut iterations = 0;

    let finish = |x: &[f64], states, iterations, failure: Option<FailureReason>| {
        let terminal_error = position_error(&ctx.model, x, x_goal);
        DriveOutcome {
            success: failure.is_none() && terminal_error < settings.tolerance,
            iterations,
            wall_time_s: clock.elapsed().as_secs_f64(),
            terminal_error,
            failure,
            states,
        }
    };

    while iterations < settings.max_iters {
        if position_error(&ctx.model, &x, x_goal) < settings.tolerance {
            return Ok(finish(&x, states, iterations, None));
        }
        let mut plan = None;
        let mut last_err = PlanError::NoValidSample;
        for attempt in 0..=settings.max_retries {
            if attempt > 0 {
                planner.reset(ctx);
            }
            let seed = derive_seed(settings.seed, &[iterations as u64, attempt as u64]);
            match planner.plan(ctx, &x, seed) {
                Ok(u) => {
                    plan = Some(u);
                    break;
                }
                Err(Error::Plan(e)) => {
                    debug!("step {iterations} attempt {attempt} failed: {e}");
                    last_err = e;
                }
                Err(Error::NonFinite) => {
                    failure = Some(FailureReason::NumericError);
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        let Some(u) = plan else {
            let reason = failure.unwrap_or(last_err.into());
            return Ok(finish(&x, states, iterations, Some(reason)));
        };

        let u1 = u.input(1.min(u.horizon() - 1));
        iterations += 1;
        x = match rk4_forward(&ctx.model, &x, u.input(0), u1, ctx.dt) {
            Ok(next) => next,
            Err(_) => return Ok(finish(&x, states, iterations, Some(FailureReason::NumericError))),
        };
        states.push(&x);
        match ctx.state_constraint.indicator(&ctx.model, &x) {
            None => {}
            Some(Infeasibility::NonFinite) => {
                return Ok(finish(&x, states, iterations, Some(FailureReason::NumericError)))
            }
            Some(_) => return Ok(finish(&x, states, iterations, Some(FailureReason::Collision))),
        }
    }
    let reached = position_error(&ctx.model, &x, x_goal) < settings.tolerance;
    let reason = (!reached).then_some(FailureReason::MaxIterations);
    Ok(finish(&x, states, iterations, reason))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{InputConstraint, StateConstraint};
    use crate::dynamics::{DiffDrive, StepSize};
    use crate::environment::OccupancyGrid;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
    use std::sync::Arc;

    struct Scripted(Vec<Result<ControlSequence, PlanError>>);

    impl Planner<DiffDrive> for Scripted {
        fn plan(&mut self, _: &PlanningContext<DiffDrive>, _: &[f64], _: u64) -> Result<ControlSequence> {
            Ok(self.0.remove(0)?)
        }

        fn reset(&mut self, _: &PlanningContext<DiffDrive>) {}
    }

    fn ctx() -> PlanningContext<DiffDrive> {
        PlanningContext {
            model: DiffDrive,
            input_constraint: InputConstraint::bounds(vec![0.0, -FRAC_PI_4], vec![1.0, FRAC_PI_4])
                .unwrap(),
            state_constraint: StateConstraint::new(Arc::new(OccupancyGrid::free_arena([3.0, 5.0], 0.1).unwrap())),
            dt: StepSize::new(0.1).unwrap(),
        }
    }

    fn settings(max_iters: usize) -> DriveSettings {
        DriveSettings {
            max_iters,
            tolerance: 0.1,
            max_retries: 2,
            seed: 7,
        }
    }

    #[test]
    fn starting_at_goal_takes_zero_iterations() {
        let mut p = Scripted(vec![]);
        let x = [1.5, 4.95, FRAC_PI_2];
        let out = closed_loop_drive(&mut p, &ctx(), &x, &[1.5, 5.0, FRAC_PI_2], &settings(10)).unwrap();
        assert!(out.success);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.states.len(), 1);
    }

    #[test]
    fn straight_drive_reaches_goal() {
        let forward = ControlSequence::constant(5, &[1.0, 0.0]);
        let mut p = Scripted(vec![Ok(forward); 20]);
        let out = closed_loop_drive(&mut p, &ctx(), &[1.5, 3.0, FRAC_PI_2], &[1.5, 4.05, FRAC_PI_2], &settings(20))
            .unwrap();
        assert!(out.success, "{out:?}");
        assert_eq!(out.iterations, 10);
        assert_eq!(out.states.len(), 11);
    }

    #[test]
    fn retries_then_reports_planner_failure() {
        let fail = Err(PlanError::AllCandidatesCollided);
        let mut p = Scripted(vec![fail; 3]);
        let out = closed_loop_drive(&mut p, &ctx(), &[1.5, 1.0, 0.0], &[1.5, 4.0, 0.0], &settings(5)).unwrap();
        assert!(!out.success);
        assert_eq!(out.failure, Some(FailureReason::AllCandidatesCollided));
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn leaving_the_arena_is_a_collision() {
        let mut p = Scripted(vec![Ok(ControlSequence::constant(5, &[1.0, 0.0])); 10]);
        let out = closed_loop_drive(&mut p, &ctx(), &[2.95, 1.0, 0.0], &[1.5, 4.0, 0.0], &settings(10)).unwrap();
        assert_eq!(out.failure, Some(FailureReason::Collision));
        assert_eq!(out.iterations, 1);
        assert_eq!(out.states.len(), 2);
    }

    #[test]
    fn budget_exhaustion() {
        let mut p = Scripted(vec![Ok(ControlSequence::constant(5, &[0.0, 0.0])); 3]);
        let out = closed_loop_drive(&mut p, &ctx(), &[1.5, 1.0, 0.0], &[1.5, 4.0, 0.0], &settings(3)).unwrap();
        assert_eq!(out.failure, Some(FailureReason::MaxIterations));
        assert_eq!(out.iterations, 3);
        assert!((out.terminal_error - 3.0).abs() < 1e-12);
    }
}
