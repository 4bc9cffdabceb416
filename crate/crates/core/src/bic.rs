//! Bidirectional clustered MPPI.
//!
//! One step runs a clustered pass forward from the current state and one
//! backward from the goal, keeps every cluster average as a branch, joins
//! each forward branch to its nearest backward branch, and refines each
//! joined reference with a guided MPPI pass. The refined candidate with the
//! lowest forward cost is returned.

use rayon::prelude::*;

use crate::clustering::{clustered_pass, ClusterConfig};
use crate::constraints::{Infeasibility, StateConstraint};
use crate::dynamics::{rollout, Direction, Dynamics};
use crate::error::{Error, PlanError, Result};
use crate::mppi::{
    argmin_cost, derive_seed, evaluate_cost, sample_batch, weighted_average, Cost, CostModel,
    NoiseSpec, PlanningContext, TrajectoryCost,
};
use crate::trajectory::{ControlSequence, StateTrajectory};

/// Cluster-averaged controls of one direction with their rollouts.
#[derive(Clone, Debug)]
pub struct BranchSet {
    pub direction: Direction,
    pub controls: Vec<ControlSequence>,
    /// Chronological; forward branches start at the current state,
    /// backward branches end at the goal.
    pub trajectories: Vec<StateTrajectory>,
    pub costs: Vec<Cost>,
}

impl BranchSet {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

fn branches<M: Dynamics>(
    ctx: &PlanningContext<M>,
    anchor: &[f64],
    direction: Direction,
    controls: Vec<ControlSequence>,
    cost: &CostModel,
) -> BranchSet {
    let n = ctx.model.state_dim();
    let (trajectories, costs) = controls
        .iter()
        .map(|u| match rollout(&ctx.model, anchor, u, direction, ctx.dt) {
            Ok(traj) => {
                let c = evaluate_cost(&ctx.model, &traj, u, cost, &ctx.state_constraint, direction);
                (traj, c)
            }
            Err(_) => (
                StateTrajectory::from_raw(n, vec![f64::NAN; (u.horizon() + 1) * n]),
                Cost::Infeasible(Infeasibility::NonFinite),
            ),
        })
        .unzip();
    BranchSet {
        direction,
        controls,
        trajectories,
        costs,
    }
}

fn remap(err: Error, to: PlanError) -> Error {
    match err {
        Error::Plan(PlanError::NoValidSample) => Error::Plan(to),
        other => other,
    }
}

/// Clustered pass from `x_init`, keeping every cluster average. `cost`
/// should target the goal.
pub fn forward_cluster<M: Dynamics>(
    ctx: &PlanningContext<M>,
    base: &ControlSequence,
    x_init: &[f64],
    config: &ClusterConfig,
    cost: &CostModel,
    seed: u64,
) -> Result<BranchSet> {
    let pass = clustered_pass(ctx, base, x_init, Direction::Forward, config, cost, seed)
        .map_err(|e| remap(e, PlanError::NoForwardSamples))?;
    Ok(branches(ctx, x_init, Direction::Forward, pass.controls, cost))
}

/// Clustered pass integrated backward from `x_goal`. `cost` should target
/// the current state; it is scored at the earliest rollout state.
pub fn backward_cluster<M: Dynamics>(
    ctx: &PlanningContext<M>,
    base: &ControlSequence,
    x_goal: &[f64],
    config: &ClusterConfig,
    cost: &CostModel,
    seed: u64,
) -> Result<BranchSet> {
    let pass = clustered_pass(ctx, base, x_goal, Direction::Backward, config, cost, seed)
        .map_err(|e| remap(e, PlanError::NoBackwardSamples))?;
    Ok(branches(ctx, x_goal, Direction::Backward, pass.controls, cost))
}

/// Where a forward branch is cut and joined to a backward branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Junction {
    pub forward: usize,
    pub backward: usize,
    /// Index `tau` into the forward trajectory.
    pub forward_cut: usize,
    /// Index `tau'` into the backward trajectory.
    pub backward_cut: usize,
    /// Position-space distance between the two cut states.
    pub distance: f64,
}

/// A joined forward/backward reference for the guided pass.
#[derive(Clone, Debug)]
pub struct GuideReference {
    pub controls: ControlSequence,
    pub states: StateTrajectory,
    pub junction: Junction,
    /// Length of the joined reference before padding, `tau + T_b - tau'`.
    pub effective_horizon: usize,
}

fn position_distance_sq<M: Dynamics + ?Sized>(model: &M, a: &[f64], b: &[f64]) -> f64 {
    model
        .position(a)
        .iter()
        .zip(model.position(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Closest pair of states between `forward` and any backward trajectory,
/// measured on positions. Ties resolve to the lexicographically smallest
/// `(backward, tau, tau')`. Returns `(backward, tau, tau', distance)`.
pub fn nearest_junction<M: Dynamics + ?Sized>(
    model: &M,
    forward: &StateTrajectory,
    backward: &[StateTrajectory],
) -> (usize, usize, usize, f64) {
    let mut best = (0, 0, 0, f64::INFINITY);
    for (j, bt) in backward.iter().enumerate() {
        for (tau, fx) in forward.iter().enumerate() {
            for (tau_b, bx) in bt.iter().enumerate() {
                let d = position_distance_sq(model, fx, bx);
                // NaN (failed rollouts) never wins.
                if d < best.3 {
                    best = (j, tau, tau_b, d);
                }
            }
        }
    }
    (best.0, best.1, best.2, best.3.sqrt())
}

/// Joins forward branch `i` and backward branch `j` at `(tau, tau')`:
/// `U = U_f[0..tau) ++ U_b[tau'..T_b)`, `X = X_f[0..=tau] ++ X_b[tau'+1..=T_b]`,
/// then pads with `fill` inputs and copies of `x_goal` up to `min_horizon`.
#[allow(clippy::too_many_arguments)]
pub fn concatenate(
    forward: &BranchSet,
    backward: &BranchSet,
    junction: Junction,
    x_goal: &[f64],
    fill: &[f64],
    min_horizon: usize,
) -> GuideReference {
    let uf = &forward.controls[junction.forward];
    let xf = &forward.trajectories[junction.forward];
    let ub = &backward.controls[junction.backward];
    let xb = &backward.trajectories[junction.backward];
    let (m, n) = (uf.dim(), xf.dim());
    let (tau, tau_b) = (junction.forward_cut, junction.backward_cut);
    let t_b = ub.horizon();

    let mut u = Vec::with_capacity(min_horizon.max(tau + t_b) * m);
    u.extend_from_slice(&uf.as_slice()[..tau * m]);
    u.extend_from_slice(&ub.as_slice()[tau_b * m..]);
    let mut x = Vec::with_capacity((min_horizon.max(tau + t_b) + 1) * n);
    x.extend_from_slice(&xf.as_slice()[..(tau + 1) * n]);
    x.extend_from_slice(&xb.as_slice()[(tau_b + 1) * n..]);

    let effective_horizon = tau + (t_b - tau_b);
    while u.len() / m < min_horizon.max(1) {
        u.extend_from_slice(fill);
        x.extend_from_slice(x_goal);
    }
    GuideReference {
        controls: ControlSequence::from_raw(m, u),
        states: StateTrajectory::from_raw(n, x),
        junction,
        effective_horizon,
    }
}

/// One joined reference per forward branch, each padded to at least
/// `min_horizon` steps.
pub fn associate<M: Dynamics + ?Sized>(
    model: &M,
    forward: &BranchSet,
    backward: &BranchSet,
    x_goal: &[f64],
    fill: &[f64],
    min_horizon: usize,
) -> Vec<GuideReference> {
    (0..forward.len())
        .map(|i| {
            let (j, tau, tau_b, distance) =
                nearest_junction(model, &forward.trajectories[i], &backward.trajectories);
            let junction = Junction {
                forward: i,
                backward: j,
                forward_cut: tau,
                backward_cut: tau_b,
                distance,
            };
            concatenate(forward, backward, junction, x_goal, fill, min_horizon)
        })
        .collect()
}

/// Weights of the tracking terms in the guided cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuideWeights {
    pub lambda_x: f64,
    pub lambda_u: f64,
    /// Inverse weight of the goal term; `f64::INFINITY` disables it.
    pub eps_goal: f64,
}

impl Default for GuideWeights {
    fn default() -> Self {
        Self {
            lambda_x: 1.0,
            lambda_u: 0.0,
            eps_goal: 0.01,
        }
    }
}

/// Forward cost plus time-aligned tracking of a reference and a goal term
/// at the reference's effective horizon.
pub struct GuideCost<'a> {
    pub base: &'a CostModel,
    pub reference: &'a GuideReference,
    pub weights: GuideWeights,
    pub goal: &'a [f64],
}

impl<M: Dynamics + ?Sized> TrajectoryCost<M> for GuideCost<'_> {
    fn evaluate(
        &self,
        model: &M,
        states: &StateTrajectory,
        controls: &ControlSequence,
        constraint: &StateConstraint,
        _direction: Direction,
    ) -> Cost {
        let j = evaluate_cost(model, states, controls, self.base, constraint, Direction::Forward);
        let Cost::Finite(mut total) = j else {
            return j;
        };
        let state_dev: f64 = states
            .iter()
            .zip(self.reference.states.iter())
            .map(|(x, r)| model.state_distance_sq(x, r))
            .sum();
        let input_dev: f64 = controls
            .as_slice()
            .iter()
            .zip(self.reference.controls.as_slice())
            .map(|(u, r)| (u - r) * (u - r))
            .sum();
        let t_i = self.reference.effective_horizon.min(states.len() - 1);
        let goal_gap = model.state_distance_sq(states.state(t_i), self.goal).sqrt();
        total += self.weights.lambda_x * state_dev;
        total += self.weights.lambda_u * input_dev;
        total += goal_gap / self.weights.eps_goal;
        Cost::Finite(total)
    }
}

/// Single guided MPPI pass warm-started at the reference controls.
#[allow(clippy::too_many_arguments)]
pub fn guide_mppi<M: Dynamics>(
    ctx: &PlanningContext<M>,
    reference: &GuideReference,
    x_init: &[f64],
    x_goal: &[f64],
    weights: GuideWeights,
    cost: &CostModel,
    noise: &NoiseSpec,
    samples: usize,
    seed: u64,
) -> Result<ControlSequence> {
    let guide = GuideCost {
        base: cost,
        reference,
        weights,
        goal: x_goal,
    };
    let batch = sample_batch(
        ctx,
        &reference.controls,
        noise,
        samples,
        x_init,
        Direction::Forward,
        &guide,
        seed,
    )?;
    let all: Vec<usize> = (0..batch.len()).collect();
    Ok(weighted_average(&batch, &all, noise.gamma, &ctx.input_constraint)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BicConfig {
    pub forward: ClusterConfig,
    pub backward: ClusterConfig,
    pub guide_samples: usize,
    pub guide: GuideWeights,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BicDiagnostics {
    pub forward_branches: usize,
    pub backward_branches: usize,
    pub junction_distances: Vec<f64>,
    pub effective_horizons: Vec<usize>,
    /// Forward cost of each refined candidate; `None` when its guided pass
    /// failed or its rollout is infeasible.
    pub candidate_costs: Vec<Option<f64>>,
    pub selected: usize,
}

#[derive(Clone, Debug)]
pub struct BicOutput {
    /// Selected controls, truncated to the forward horizon.
    pub controls: ControlSequence,
    /// Backward branch joined to the selected candidate.
    pub backward_controls: ControlSequence,
    pub diagnostics: BicDiagnostics,
}

/// One full bidirectional step. `cost` carries the weights; its target is
/// replaced by `x_goal` (forward) and `x_init` (backward).
#[allow(clippy::too_many_arguments)]
pub fn bic_mppi_step<M: Dynamics>(
    ctx: &PlanningContext<M>,
    forward_base: &ControlSequence,
    backward_base: &ControlSequence,
    x_init: &[f64],
    x_goal: &[f64],
    config: &BicConfig,
    cost: &CostModel,
    seed: u64,
) -> Result<BicOutput> {
    let horizon_f = forward_base.horizon();
    let forward_cost = cost.retarget(x_goal);
    let backward_cost = cost.retarget(x_init);

    let forward = forward_cluster(
        ctx,
        forward_base,
        x_init,
        &config.forward,
        &forward_cost,
        derive_seed(seed, &[1]),
    )?;
    let backward = backward_cluster(
        ctx,
        backward_base,
        x_goal,
        &config.backward,
        &backward_cost,
        derive_seed(seed, &[2]),
    )?;

    let mut fill = ctx.model.rest_input();
    ctx.input_constraint.project_in_place(&mut fill);
    let references = associate(&ctx.model, &forward, &backward, x_goal, &fill, horizon_f);

    let guided: Vec<Option<ControlSequence>> = references
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            guide_mppi(
                ctx,
                r,
                x_init,
                x_goal,
                config.guide,
                &forward_cost,
                &config.forward.noise,
                config.guide_samples,
                derive_seed(seed, &[3, i as u64]),
            )
            .ok()
        })
        .collect();

    let candidates: Vec<Option<ControlSequence>> =
        guided.into_iter().map(|g| g.map(|u| u.truncated(horizon_f))).collect();
    let costs: Vec<Cost> = candidates
        .iter()
        .map(|c| match c {
            Some(u) => match rollout(&ctx.model, x_init, u, Direction::Forward, ctx.dt) {
                Ok(traj) => forward_cost.evaluate(
                    &ctx.model,
                    &traj,
                    u,
                    &ctx.state_constraint,
                    Direction::Forward,
                ),
                Err(_) => Cost::Infeasible(Infeasibility::NonFinite),
            },
            None => Cost::Infeasible(Infeasibility::Collision),
        })
        .collect();

    let selected = argmin_cost(&costs).ok_or(PlanError::AllCandidatesCollided)?;
    let diagnostics = BicDiagnostics {
        forward_branches: forward.len(),
        backward_branches: backward.len(),
        junction_distances: references.iter().map(|r| r.junction.distance).collect(),
        effective_horizons: references.iter().map(|r| r.effective_horizon).collect(),
        candidate_costs: costs.iter().map(|c| c.value()).collect(),
        selected,
    };
    let backward_controls = backward.controls[references[selected].junction.backward].clone();
    let controls = candidates[selected].clone().expect("selected candidate is feasible");
    Ok(BicOutput {
        controls,
        backward_controls,
        diagnostics,
    })
}
