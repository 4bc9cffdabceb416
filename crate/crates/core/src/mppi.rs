//! Sampling, rollout costing, softmax averaging and the plain MPPI update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::constraints::{Infeasibility, InputConstraint, StateConstraint};
use crate::dynamics::{rollout, Direction, Dynamics, StepSize};
use crate::error::{Error, PlanError, Result};
use crate::trajectory::{ControlSequence, StateTrajectory};

/// Rollout cost: a finite value, or the indicator firing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infeasible(Infeasibility),
}

impl Cost {
    pub fn value(self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Infeasible(_) => None,
        }
    }

    pub fn is_feasible(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    /// `+inf` for infeasible rollouts.
    pub fn as_f64(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

/// Index of the lowest finite cost, first index on ties.
pub fn argmin_cost(costs: &[Cost]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in costs.iter().enumerate() {
        if let Cost::Finite(v) = c {
            if best.is_none_or(|(_, b)| *v < b) {
                best = Some((i, *v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Diagonal Gaussian exploration noise and the softmax inverse temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    std_dev: Vec<f64>,
    pub gamma: f64,
}

impl NoiseSpec {
    /// `variances` is the diagonal of the input covariance.
    pub fn new(variances: &[f64], gamma: f64) -> Result<Self> {
        if variances.is_empty() || variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("covariance diagonal must be positive".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        Ok(Self {
            std_dev: variances.iter().map(|v| v.sqrt()).collect(),
            gamma,
        })
    }

    pub fn std_dev(&self) -> &[f64] {
        &self.std_dev
    }

    pub fn dim(&self) -> usize {
        self.std_dev.len()
    }
}

/// Terminal distance to a target plus quadratic input effort, with an
/// optional per-stage distance term.
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    pub terminal_weight: f64,
    /// Weight of `|p(x_t) - p(target)|` summed over the non-terminal states.
    pub stage_weight: f64,
    pub input_weights: Vec<f64>,
    /// Goal for forward rollouts, initial state for backward ones.
    pub target: Vec<f64>,
}

impl CostModel {
    pub fn new(terminal_weight: f64, input_weights: Vec<f64>, target: Vec<f64>) -> Self {
        Self {
            terminal_weight,
            stage_weight: 0.0,
            input_weights,
            target,
        }
    }

    pub fn with_stage_weight(mut self, stage_weight: f64) -> Self {
        self.stage_weight = stage_weight;
        self
    }

    pub fn retarget(&self, target: &[f64]) -> Self {
        Self {
            target: target.to_vec(),
            ..self.clone()
        }
    }
}

/// Scores one rollout.
pub trait TrajectoryCost<M: Dynamics + ?Sized>: Sync {
    fn evaluate(
        &self,
        model: &M,
        states: &StateTrajectory,
        controls: &ControlSequence,
        constraint: &StateConstraint,
        direction: Direction,
    ) -> Cost;
}

/// The indicator over every stored state, `x_0` through `x_T` inclusive.
pub fn first_violation<M: Dynamics + ?Sized>(
    model: &M,
    states: &StateTrajectory,
    constraint: &StateConstraint,
) -> Option<Infeasibility> {
    states.iter().find_map(|s| constraint.indicator(model, s))
}

/// `w_phi |p(x_end) - p(target)| + sum_t u_t^T diag(w) u_t`, plus
/// `w_s sum_t |p(x_t) - p(target)|` over the other states, or infeasible
/// when any state trips the indicator. Forward rollouts are scored at
/// `x_T` (stages `x_0..x_{T-1}`), backward rollouts at `x_0` (stages
/// `x_1..x_T`).
pub fn evaluate_cost<M: Dynamics + ?Sized>(
    model: &M,
    states: &StateTrajectory,
    controls: &ControlSequence,
    cost: &CostModel,
    constraint: &StateConstraint,
    direction: Direction,
) -> Cost {
    if let Some(reason) = first_violation(model, states, constraint) {
        return Cost::Infeasible(reason);
    }
    let q = model.position(&cost.target);
    let dist_to_target = |x: &[f64]| {
        model
            .position(x)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let (end, stages) = match direction {
        Direction::Forward => (states.last(), 0..states.len() - 1),
        Direction::Backward => (states.first(), 1..states.len()),
    };
    let dist = dist_to_target(end);
    let mut total = cost.terminal_weight * dist;
    if cost.stage_weight != 0.0 {
        total += cost.stage_weight * stages.map(|t| dist_to_target(states.state(t))).sum::<f64>();
    }
    if cost.input_weights.iter().any(|w| *w != 0.0) {
        for u in controls.iter() {
            total += u
                .iter()
                .zip(&cost.input_weights)
                .map(|(v, w)| w * v * v)
                .sum::<f64>();
        }
    }
    Cost::Finite(total)
}

impl<M: Dynamics + ?Sized> TrajectoryCost<M> for CostModel {
    fn evaluate(
        &self,
        model: &M,
        states: &StateTrajectory,
        controls: &ControlSequence,
        constraint: &StateConstraint,
        direction: Direction,
    ) -> Cost {
        evaluate_cost(model, states, controls, self, constraint, direction)
    }
}

/// Everything a planner step shares read-only across workers.
#[derive(Clone, Debug)]
pub struct PlanningContext<M> {
    pub model: M,
    pub input_constraint: InputConstraint,
    pub state_constraint: StateConstraint,
    pub dt: StepSize,
}

/// `N` perturbed, projected input sequences with their rollouts and costs.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    /// Raw Gaussian perturbations before projection.
    pub noises: Vec<ControlSequence>,
    /// `project(base + noise)`.
    pub inputs: Vec<ControlSequence>,
    /// Chronological states; all-NaN when integration blew up.
    pub trajectories: Vec<StateTrajectory>,
    pub costs: Vec<Cost>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn feasible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.costs[k].is_feasible()).collect()
    }
}

/// Mixes `tags` into `master` to obtain an independent stream key.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter()
        .fold(splitmix(master), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// Per-sample generator: one ChaCha stream per sample index, so results do
/// not depend on how samples are spread over workers.
fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

/// Draws one noise sequence of the given horizon.
pub fn draw_noise(noise: &NoiseSpec, horizon: usize, seed: u64, sample: usize) -> ControlSequence {
    let mut rng = sample_rng(seed, sample);
    let m = noise.dim();
    let mut data = Vec::with_capacity(horizon * m);
    for _ in 0..horizon {
        for s in noise.std_dev() {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(z * s);
        }
    }
    ControlSequence::from_raw(m, data)
}

#[allow(clippy::too_many_arguments)]
pub fn sample_batch<M, C>(
    ctx: &PlanningContext<M>,
    base: &ControlSequence,
    noise: &NoiseSpec,
    samples: usize,
    start: &[f64],
    direction: Direction,
    cost: &C,
    seed: u64,
) -> Result<RolloutBatch>
where
    M: Dynamics,
    C: TrajectoryCost<M> + ?Sized,
{
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let m = ctx.model.input_dim();
    for (expected, actual) in [
        (m, base.dim()),
        (m, noise.dim()),
        (m, ctx.input_constraint.dim()),
        (ctx.model.state_dim(), start.len()),
    ] {
        if expected != actual {
            return Err(Error::Dimension { expected, actual });
        }
    }
    let horizon = base.horizon();
    let n = ctx.model.state_dim();

    let results: Vec<_> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let eps = draw_noise(noise, horizon, seed, k);
            let mut input = base.clone();
            for (u, e) in input.as_mut_slice().iter_mut().zip(eps.as_slice()) {
                *u += e;
            }
            ctx.input_constraint.project_sequence(&mut input);
            let (traj, cost) = match rollout(&ctx.model, start, &input, direction, ctx.dt) {
                Ok(traj) => {
                    let c = cost.evaluate(&ctx.model, &traj, &input, &ctx.state_constraint, direction);
                    (traj, c)
                }
                Err(_) => (
                    StateTrajectory::from_raw(n, vec![f64::NAN; (horizon + 1) * n]),
                    Cost::Infeasible(Infeasibility::NonFinite),
                ),
            };
            (eps, input, traj, cost)
        })
        .collect();

    let mut batch = RolloutBatch {
        noises: Vec::with_capacity(samples),
        inputs: Vec::with_capacity(samples),
        trajectories: Vec::with_capacity(samples),
        costs: Vec::with_capacity(samples),
    };
    for (eps, input, traj, cost) in results {
        batch.noises.push(eps);
        batch.inputs.push(input);
        batch.trajectories.push(traj);
        batch.costs.push(cost);
    }
    Ok(batch)
}

/// Normalized weights `exp(-gamma (J - min J)) / sum` over `indices`, in
/// the same order. Infeasible members get exactly zero.
pub fn softmax_weights(costs: &[Cost], indices: &[usize], gamma: f64) -> Result<Vec<f64>, PlanError> {
    let baseline = indices
        .iter()
        .filter_map(|&k| costs[k].value())
        .fold(f64::INFINITY, f64::min);
    if !baseline.is_finite() {
        return Err(PlanError::NoValidSample);
    }
    let mut weights: Vec<f64> = indices
        .iter()
        .map(|&k| match costs[k] {
            Cost::Finite(j) => (-gamma * (j - baseline)).exp(),
            Cost::Infeasible(_) => 0.0,
        })
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Softmax-weighted average of the member input sequences, projected once
/// more to remove round-off outside the (convex) input set.
pub fn weighted_average(
    batch: &RolloutBatch,
    indices: &[usize],
    gamma: f64,
    constraint: &InputConstraint,
) -> Result<ControlSequence, PlanError> {
    let weights = softmax_weights(&batch.costs, indices, gamma)?;
    let first = &batch.inputs[indices[0]];
    let mut acc = vec![0.0; first.as_slice().len()];
    for (&k, &w) in indices.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (a, u) in acc.iter_mut().zip(batch.inputs[k].as_slice()) {
            *a += w * u;
        }
    }
    let mut out = ControlSequence::from_raw(first.dim(), acc);
    constraint.project_sequence(&mut out);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MppiConfig {
    pub noise: NoiseSpec,
    pub samples: usize,
}

/// One MPPI iteration over all samples.
pub fn vanilla_mppi_step<M: Dynamics>(
    ctx: &PlanningContext<M>,
    base: &ControlSequence,
    x_init: &[f64],
    config: &MppiConfig,
    cost: &CostModel,
    seed: u64,
) -> Result<ControlSequence> {
    let batch = sample_batch(
        ctx,
        base,
        &config.noise,
        config.samples,
        x_init,
        Direction::Forward,
        cost,
        seed,
    )?;
    let all: Vec<usize> = (0..batch.len()).collect();
    Ok(weighted_average(&batch, &all, config.noise.gamma, &ctx.input_constraint)?)
}

/// Drops the applied input and appends a (projected) zero input.
pub fn warm_start_shift(prev: &ControlSequence, constraint: &InputConstraint) -> ControlSequence {
    warm_start_shift_with(prev, &vec![0.0; prev.dim()], constraint)
}

/// Like [`warm_start_shift`] but appends a projected copy of `fill`.
pub fn warm_start_shift_with(
    prev: &ControlSequence,
    fill: &[f64],
    constraint: &InputConstraint,
) -> ControlSequence {
    let m = prev.dim();
    let mut data = prev.as_slice()[m.min(prev.as_slice().len())..].to_vec();
    let mut tail = fill.to_vec();
    constraint.project_in_place(&mut tail);
    data.extend_from_slice(&tail);
    ControlSequence::from_raw(m, data)
}
