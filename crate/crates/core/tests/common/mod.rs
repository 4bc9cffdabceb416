//! Independent reference implementations shared by the property and
//! acceptance tests. Nothing here calls into the code under test except for
//! plain data types.

#![allow(dead_code)]

use std::collections::VecDeque;

use bicmppi::bic::{associate, BranchSet};
use bicmppi::clustering::{dbscan, FeatureMatrix};
use bicmppi::constraints::InputConstraint;
use bicmppi::dynamics::{rk4_backward, rk4_forward, rollout};
use bicmppi::mppi::{softmax_weights, weighted_average};
use bicmppi::{ControlSequence, Cost, DbscanParams, Direction, Infeasibility, Model, RolloutBatch};
use bicmppi::{StateTrajectory, StepSize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub type Check = Result<(), String>;

// ---------------------------------------------------------------------------
// Input projection

/// Nearest point of `{|a| <= a_max, |a_xy| <= tan(theta) a_z}` found by
/// numeric search in the half-plane spanned by `u` and the z axis.
pub fn cone_ball_oracle(u: &[f64], a_max: f64, theta: f64) -> [f64; 3] {
    let rho = u[0].hypot(u[1]);
    let z = u[2];
    let (ex, ey) = if rho > 0.0 { (u[0] / rho, u[1] / rho) } else { (1.0, 0.0) };
    let lift = |r: f64, h: f64| [r * ex, r * ey, h];

    let inside = |r: f64, h: f64| r * r + h * h <= a_max * a_max && r <= theta.tan() * h;
    if inside(rho, z) {
        return [u[0], u[1], u[2]];
    }
    // Outside the set the nearest point lies on the boundary: the slanted
    // edge `s (sin t, cos t)`, the cap arc `a_max (sin p, cos p)`, or the
    // axis segment `(0, s)`.
    let d2 = |r: f64, h: f64| (r - rho).powi(2) + (h - z).powi(2);
    let edge = |s: f64| (s * theta.sin(), s * theta.cos());
    let arc = |p: f64| (a_max * p.sin(), a_max * p.cos());
    let axis = |s: f64| (0.0, s);

    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (curve, hi) in [
        (&edge as &dyn Fn(f64) -> (f64, f64), a_max),
        (&arc as &dyn Fn(f64) -> (f64, f64), theta),
        (&axis as &dyn Fn(f64) -> (f64, f64), a_max),
    ] {
        let f = |s: f64| {
            let (r, h) = curve(s);
            d2(r, h)
        };
        let s = minimize_1d(&f, 0.0, hi);
        let (r, h) = curve(s);
        let d = d2(r, h);
        if d < best.0 {
            best = (d, r, h);
        }
    }
    lift(best.1, best.2)
}

/// Coarse grid scan followed by golden-section refinement. Adequate for the
/// unimodal-on-bracket distance profiles used here.
fn minimize_1d(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const GRID: usize = 400;
    let step = (hi - lo) / GRID as f64;
    let mut k_best = 0;
    let mut f_best = f64::INFINITY;
    for k in 0..=GRID {
        let v = f(lo + k as f64 * step);
        if v < f_best {
            f_best = v;
            k_best = k;
        }
    }
    let mut a = lo + (k_best.saturating_sub(1)) as f64 * step;
    let mut b = (lo + (k_best + 1) as f64 * step).min(hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn random_cone(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.random_range(0.5..30.0), rng.random_range(0.1..1.5))
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Idempotence, membership and optimality of one projection.
pub fn check_projection(c: &InputConstraint, u: &[f64], rng: &mut ChaCha8Rng) -> Check {
    let p = c.project(u);
    if c.project(&p) != p {
        return Err(format!("projection not idempotent at {u:?}"));
    }
    let tol = match c {
        InputConstraint::Box { .. } => 0.0,
        InputConstraint::NormCone { .. } => 1e-9,
    };
    if !c.contains(&p, tol) {
        return Err(format!("projection of {u:?} is infeasible: {p:?}"));
    }
    // No random feasible point may be closer.
    let scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs())) * 2.0;
    for _ in 0..20 {
        let cand = c.project(&random_vec(rng, u.len(), scale));
        if dist(&p, u) > dist(&cand, u) + 1e-9 {
            return Err(format!("feasible {cand:?} beats projection {p:?} of {u:?}"));
        }
    }
    match c {
        InputConstraint::Box { lower, upper } => {
            let expect: Vec<f64> = u
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, h))| if v < l { *l } else if v > h { *h } else { *v })
                .collect();
            if expect != p {
                return Err(format!("box projection {p:?} != {expect:?}"));
            }
        }
        InputConstraint::NormCone { a_max, theta_max } => {
            let o = cone_ball_oracle(u, *a_max, *theta_max);
            if dist(&o, &p) > 1e-6 * a_max.max(1.0) {
                return Err(format!("cone projection {p:?} differs from oracle {o:?} for {u:?}"));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Softmax averaging

/// A batch with the given costs and random feasible inputs.
pub fn synthetic_batch(
    costs: &[Cost],
    horizon: usize,
    constraint: &InputConstraint,
    rng: &mut ChaCha8Rng,
) -> RolloutBatch {
    let m = constraint.dim();
    let mut inputs = Vec::new();
    for _ in costs {
        let mut u = ControlSequence::new(m, random_vec(rng, horizon * m, 5.0)).unwrap();
        constraint.project_sequence(&mut u);
        inputs.push(u);
    }
    RolloutBatch {
        noises: inputs.clone(),
        inputs,
        trajectories: costs
            .iter()
            .map(|_| StateTrajectory::new(1, vec![0.0; horizon + 1]).unwrap())
            .collect(),
        costs: costs.to_vec(),
    }
}

/// Costs on a dyadic grid so that shifting by a dyadic constant is exact.
pub fn dyadic_costs(rng: &mut ChaCha8Rng, n: usize, collided_share: f64) -> Vec<Cost> {
    let mut costs: Vec<Cost> = (0..n)
        .map(|_| {
            if rng.random_bool(collided_share) {
                Cost::Infeasible(Infeasibility::Collision)
            } else {
                Cost::Finite(rng.random_range(0..4096) as f64 / 256.0)
            }
        })
        .collect();
    // At least one feasible sample.
    let k = rng.random_range(0..n);
    costs[k] = Cost::Finite(rng.random_range(0..4096) as f64 / 256.0);
    costs
}

pub fn shift_costs(costs: &[Cost], c: f64) -> Vec<Cost> {
    costs
        .iter()
        .map(|x| match x {
            Cost::Finite(j) => Cost::Finite(j + c),
            other => *other,
        })
        .collect()
}

pub fn check_weighted_average(
    constraint: &InputConstraint,
    costs: &[Cost],
    shift: f64,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Check {
    let batch = synthetic_batch(costs, 6, constraint, rng);
    let all: Vec<usize> = (0..costs.len()).collect();
    let w = softmax_weights(costs, &all, gamma).map_err(|e| e.to_string())?;
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("weights sum to {total}"));
    }
    for (k, c) in costs.iter().enumerate() {
        if !c.is_feasible() && w[k] != 0.0 {
            return Err(format!("collided sample {k} has weight {}", w[k]));
        }
    }
    let avg = weighted_average(&batch, &all, gamma, constraint).map_err(|e| e.to_string())?;
    let tol = match constraint {
        InputConstraint::Box { .. } => 0.0,
        InputConstraint::NormCone { .. } => 1e-9,
    };
    for t in 0..avg.horizon() {
        if !constraint.contains(avg.input(t), tol) {
            return Err(format!("average infeasible at t={t}: {:?}", avg.input(t)));
        }
    }
    let mut shifted = batch.clone();
    shifted.costs = shift_costs(costs, shift);
    let avg2 = weighted_average(&shifted, &all, gamma, constraint).map_err(|e| e.to_string())?;
    if avg.as_slice() != avg2.as_slice() {
        return Err(format!("shifting costs by {shift} changed the average"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// DBSCAN

/// Density-reachability clustering from first principles: core points are
/// joined through the core-core neighbor graph, clusters are ordered by
/// their lowest core index, and a border point joins the earliest cluster
/// holding one of its core neighbors.
pub fn dbscan_oracle(points: &[Vec<f64>], min_points: usize, eps: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let near = |a: usize, b: usize| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            <= eps * eps
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_points)
        .collect();
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for i in 0..n {
        if !core[i] || comp[i] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([i]);
        comp[i] = count;
        while let Some(a) = queue.pop_front() {
            for b in 0..n {
                if core[b] && comp[b] == usize::MAX && near(a, b) {
                    comp[b] = count;
                    queue.push_back(b);
                }
            }
        }
        count += 1;
    }
    let mut clusters = vec![Vec::new(); count];
    for i in 0..n {
        let label = if core[i] {
            Some(comp[i])
        } else {
            (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j]).min()
        };
        if let Some(c) = label {
            clusters[c].push(i);
        }
    }
    if clusters.is_empty() {
        return vec![(0..n).collect()];
    }
    clusters
}

pub fn random_points(rng: &mut ChaCha8Rng, max_n: usize) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=max_n);
    let dim = rng.random_range(1..=4);
    let blobs: Vec<Vec<f64>> = (0..rng.random_range(1..=4)).map(|_| random_vec(rng, dim, 1.0)).collect();
    (0..n)
        .map(|_| {
            let b = &blobs[rng.random_range(0..blobs.len())];
            // Snap to an eighth-unit lattice so exact ties at eps occur.
            b.iter()
                .map(|c| ((c + rng.random_range(-0.3..0.3)) * 8.0).round() / 8.0)
                .collect()
        })
        .collect()
}

pub fn check_dbscan(points: &[Vec<f64>], min_points: usize, eps: f64) -> Check {
    let features = FeatureMatrix::from_points(points).map_err(|e| e.to_string())?;
    let params = DbscanParams {
        min_points,
        eps_max: eps,
        cost_weight: 0.0,
    };
    let got = dbscan(&features, &params);
    let want = dbscan_oracle(points, min_points, eps);
    let mut a = got.clusters.clone();
    let mut b = want.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(format!("dbscan {a:?} != oracle {b:?} (p={min_points}, eps={eps})"));
    }
    check_partition(&got.clusters, got.fallback, points.len(), &(0..points.len()).collect::<Vec<_>>())
}

/// Clusters are disjoint, drawn from `allowed`, and the fallback is the
/// whole batch.
pub fn check_partition(clusters: &[Vec<usize>], fallback: bool, batch: usize, allowed: &[usize]) -> Check {
    if fallback {
        let all: Vec<usize> = (0..batch).collect();
        return if clusters.len() == 1 && clusters[0] == all {
            Ok(())
        } else {
            Err("fallback is not the complete sample set".into())
        };
    }
    let mut seen = vec![false; batch];
    for c in clusters {
        if c.is_empty() {
            return Err("empty cluster".into());
        }
        for &k in c {
            if seen[k] {
                return Err(format!("sample {k} in two clusters"));
            }
            if !allowed.contains(&k) {
                return Err(format!("sample {k} is not eligible"));
            }
            seen[k] = true;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Association

/// Branch set with integer-lattice diff-drive states so that distances tie.
pub fn lattice_branches(
    rng: &mut ChaCha8Rng,
    count: usize,
    horizon: usize,
    direction: Direction,
    anchor: &[f64],
) -> BranchSet {
    let mut controls = Vec::new();
    let mut trajectories = Vec::new();
    for _ in 0..count {
        let u = ControlSequence::new(2, random_vec(rng, horizon * 2, 1.0)).unwrap();
        let mut x: Vec<f64> = Vec::new();
        for _ in 0..=horizon {
            x.push(rng.random_range(-4..=4) as f64);
            x.push(rng.random_range(-4..=4) as f64);
            x.push(rng.random_range(-3.0..3.0));
        }
        let n = x.len();
        match direction {
            Direction::Forward => x[..3].copy_from_slice(anchor),
            Direction::Backward => x[n - 3..].copy_from_slice(anchor),
        }
        controls.push(u);
        trajectories.push(StateTrajectory::new(3, x).unwrap());
    }
    BranchSet {
        direction,
        costs: vec![Cost::Finite(0.0); count],
        controls,
        trajectories,
    }
}

/// Exhaustive `(j, tau, tau')` scan with lexicographic tie-breaking.
pub fn junction_oracle(forward: &StateTrajectory, backward: &[StateTrajectory]) -> (usize, usize, usize, f64) {
    let mut all = Vec::new();
    for (j, bt) in backward.iter().enumerate() {
        for tau in 0..forward.len() {
            for tb in 0..bt.len() {
                let d = dist(&forward.state(tau)[..2], &bt.state(tb)[..2]);
                all.push((d, j, tau, tb));
            }
        }
    }
    let min = all.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let (d, j, tau, tb) = all.into_iter().filter(|e| e.0 == min).min_by_key(|e| (e.1, e.2, e.3)).unwrap();
    (j, tau, tb, d)
}

pub fn check_association(rng: &mut ChaCha8Rng) -> Check {
    let model = Model::diff_drive();
    let x_init = [0.0, 0.0, 0.5];
    let x_goal = [3.0, 3.0, 1.0];
    let t_f = rng.random_range(1..=12);
    let t_b = rng.random_range(1..=12);
    let (n_f, n_b) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let fwd = lattice_branches(rng, n_f, t_f, Direction::Forward, &x_init);
    let bwd = lattice_branches(rng, n_b, t_b, Direction::Backward, &x_goal);
    let fill = [0.0, 0.0];
    let refs = associate(&model, &fwd, &bwd, &x_goal, &fill, t_f);
    if refs.len() != fwd.len() {
        return Err("one reference per forward branch expected".into());
    }
    for (i, r) in refs.iter().enumerate() {
        let (j, tau, tb, d) = junction_oracle(&fwd.trajectories[i], &bwd.trajectories);
        let jn = r.junction;
        if (jn.forward, jn.backward, jn.forward_cut, jn.backward_cut) != (i, j, tau, tb) || jn.distance != d {
            return Err(format!("junction {jn:?} != oracle ({i}, {j}, {tau}, {tb}, {d})"));
        }
        check_concatenation(r, &fwd, &bwd, &x_init, &x_goal, t_f)?;
    }
    Ok(())
}

pub fn check_concatenation(
    r: &bicmppi::GuideReference,
    fwd: &BranchSet,
    bwd: &BranchSet,
    x_init: &[f64],
    x_goal: &[f64],
    t_f: usize,
) -> Check {
    let jn = r.junction;
    let t_b = bwd.controls[jn.backward].horizon();
    let t_i = jn.forward_cut + t_b - jn.backward_cut;
    if r.effective_horizon != t_i {
        return Err(format!("T_i {} != {t_i}", r.effective_horizon));
    }
    let len = r.controls.horizon();
    if len != t_f.max(t_i).max(1) || r.states.len() != len + 1 {
        return Err(format!("lengths |U|={len} |X|={} for T_f={t_f} T_i={t_i}", r.states.len()));
    }
    // Joining at the backward branch's final state with no padding leaves
    // the forward state closest to the goal as the endpoint.
    let end_on_forward = jn.backward_cut == t_b && t_i >= t_f.max(1);
    let expected_last = if end_on_forward {
        fwd.trajectories[jn.forward].state(jn.forward_cut)
    } else {
        x_goal
    };
    if r.states.first() != x_init || r.states.last() != expected_last {
        return Err("reference endpoints are wrong".into());
    }
    let xf = &fwd.trajectories[jn.forward];
    let n = xf.dim();
    if r.states.as_slice()[..(jn.forward_cut + 1) * n] != xf.as_slice()[..(jn.forward_cut + 1) * n] {
        return Err("forward prefix altered".into());
    }
    let m = r.controls.dim();
    let uf = &fwd.controls[jn.forward];
    if r.controls.as_slice()[..jn.forward_cut * m] != uf.as_slice()[..jn.forward_cut * m] {
        return Err("forward control prefix altered".into());
    }
    let ub = &bwd.controls[jn.backward];
    let tail = &ub.as_slice()[jn.backward_cut * m..];
    if &r.controls.as_slice()[jn.forward_cut * m..jn.forward_cut * m + tail.len()] != tail {
        return Err("backward control suffix altered".into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Integration

/// Closed-form unicycle pose after `t` seconds at constant `(v, w)`.
pub fn unicycle_arc(x0: [f64; 3], v: f64, w: f64, t: f64) -> [f64; 3] {
    let th = x0[2] + w * t;
    [
        x0[0] + v / w * (th.sin() - x0[2].sin()),
        x0[1] - v / w * (th.cos() - x0[2].cos()),
        th,
    ]
}

/// Endpoint position error of a constant-input RK4 rollout over `duration`.
pub fn arc_error(dt: f64, duration: f64) -> f64 {
    let model = Model::diff_drive();
    let (v, w) = (1.0, 2.5);
    let x0 = [0.3, -0.2, 0.4];
    let steps = (duration / dt).round() as usize;
    let u = ControlSequence::constant(steps, &[v, w]);
    let traj = rollout(&model, &x0, &u, Direction::Forward, StepSize::new(dt).unwrap()).unwrap();
    let exact = unicycle_arc(x0, v, w, duration);
    dist(&traj.last()[..2], &exact[..2])
}

/// Damped, torque-driven pendulum `[angle, rate]`. Both benchmark models
/// round-trip exactly under the input-interpolated RK4 (their heading is
/// input-driven only), so the order check needs a genuinely nonlinear state.
pub struct Pendulum;

impl bicmppi::Dynamics for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn position_dim(&self) -> usize {
        1
    }
    fn derivative(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = -9.81 * x[0].sin() - 0.4 * x[1] + u[0];
    }
}

/// Largest one-step mismatch of `forward(backward(x))` over a fixed set of
/// pendulum states and input pairs.
pub fn round_trip_mismatch(dt: f64) -> f64 {
    let h = StepSize::new(dt).unwrap();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = [r.random_range(-3.0..3.0), r.random_range(-2.0..2.0)];
        let u_t = [r.random_range(-2.0..2.0)];
        let u_prev = [r.random_range(-2.0..2.0)];
        let back = rk4_backward(&Pendulum, &x, &u_t, &u_prev, h).unwrap();
        let again = rk4_forward(&Pendulum, &back, &u_prev, &u_t, h).unwrap();
        worst = worst.max(dist(&again, &x));
    }
    worst
}

/// Same round trip on a benchmark model with random states and inputs.
pub fn model_round_trip_mismatch(model: &Model, dt: f64) -> f64 {
    let h = StepSize::new(dt).unwrap();
    let (n, m) = (bicmppi::Dynamics::state_dim(model), bicmppi::Dynamics::input_dim(model));
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = random_vec(&mut r, n, 3.0);
        let u_t = random_vec(&mut r, m, 2.0);
        let u_prev = random_vec(&mut r, m, 2.0);
        let back = rk4_backward(model, &x, &u_t, &u_prev, h).unwrap();
        let again = rk4_forward(model, &back, &u_prev, &u_t, h).unwrap();
        worst = worst.max(dist(&again, &x));
    }
    worst
}

// ---------------------------------------------------------------------------
// Guided tracking

pub fn empty_diff_drive_context() -> bicmppi::PlanningContext<Model> {
    let grid = bicmppi::OccupancyGrid::free_arena([3.0, 5.0], 0.1).unwrap();
    bicmppi::PlanningContext {
        model: Model::diff_drive(),
        input_constraint: InputConstraint::bounds(
            vec![0.0, -std::f64::consts::FRAC_PI_4],
            vec![1.0, std::f64::consts::FRAC_PI_4],
        )
        .unwrap(),
        state_constraint: bicmppi::StateConstraint::new(std::sync::Arc::new(grid)),
        dt: StepSize::new(0.1).unwrap(),
    }
}

/// A gently curving, feasible 5 s reference from the bottom of the arena.
pub fn curved_reference(ctx: &bicmppi::PlanningContext<Model>) -> bicmppi::GuideReference {
    let horizon = 50;
    let rows: Vec<Vec<f64>> = (0..horizon)
        .map(|t| vec![0.5, 0.35 * (t as f64 * 0.12).sin()])
        .collect();
    let controls = ControlSequence::from_rows(&rows).unwrap();
    let x0 = [1.5, 0.5, std::f64::consts::FRAC_PI_2];
    let states = rollout(&ctx.model, &x0, &controls, Direction::Forward, ctx.dt).unwrap();
    bicmppi::GuideReference {
        controls,
        states,
        junction: bicmppi::Junction {
            forward: 0,
            backward: 0,
            forward_cut: horizon,
            backward_cut: horizon,
            distance: 0.0,
        },
        effective_horizon: horizon,
    }
}

/// Largest position gap between the guided rollout and the reference.
pub fn guide_tracking_deviation(lambda_x: f64, samples: usize, seed: u64) -> f64 {
    let ctx = empty_diff_drive_context();
    let reference = curved_reference(&ctx);
    let x0 = reference.states.first().to_vec();
    let goal = reference.states.last().to_vec();
    let cost = bicmppi::CostModel::new(50.0, vec![0.0, 0.0], goal.clone());
    let weights = bicmppi::GuideWeights {
        lambda_x,
        ..Default::default()
    };
    let noise = bicmppi::NoiseSpec::new(&[0.25, 0.25], 10.0).unwrap();
    let u = bicmppi::bic::guide_mppi(&ctx, &reference, &x0, &goal, weights, &cost, &noise, samples, seed).unwrap();
    let traj = rollout(&ctx.model, &x0, &u, Direction::Forward, ctx.dt).unwrap();
    traj.iter()
        .zip(reference.states.iter())
        .map(|(a, b)| dist(&a[..2], &b[..2]))
        .fold(0.0, f64::max)
}
