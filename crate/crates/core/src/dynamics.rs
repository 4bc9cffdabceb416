//! Continuous-time models and the forward/backward RK4 rollout maps.
//!
//! Both RK4 variants interpolate the input linearly across a step: the stage
//! evaluations use `u_t` at the anchor state, `(u_t + u_other) / 2` at the
//! two midpoints and `u_other` at the far end. Forward steps pair `u_t` with
//! `u_{t+1}`, backward steps pair it with `u_{t-1}`; at the ends of the
//! sequence the boundary input is reused.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{ControlSequence, StateTrajectory};

/// Upper bound on state and input dimension handled by the stack buffers.
pub const MAX_DIM: usize = 8;

pub const GRAVITY: f64 = 9.81;

/// A control-affine or general ODE `x' = F(x, u)` with a position readout.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Number of leading state coordinates that form the position `p(x)`.
    fn position_dim(&self) -> usize;

    fn derivative(&self, state: &[f64], input: &[f64], out: &mut [f64]);

    fn position<'a>(&self, state: &'a [f64]) -> &'a [f64] {
        &state[..self.position_dim()]
    }

    /// Squared state distance used by tracking metrics. Models with angular
    /// coordinates wrap them here.
    fn state_distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// Input that keeps the model at rest, used to seed warm starts.
    fn rest_input(&self) -> Vec<f64> {
        vec![0.0; self.input_dim()]
    }
}

/// Integration step length in seconds.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct StepSize(f64);

impl StepSize {
    pub fn new(dt: f64) -> Result<Self> {
        if dt > 0.0 && dt.is_finite() {
            Ok(Self(dt))
        } else {
            Err(Error::InvalidParameter(format!("step size must be positive, got {dt}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiffDriveState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl DiffDriveState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

impl From<[f64; 3]> for DiffDriveState {
    fn from([x, y, theta]: [f64; 3]) -> Self {
        Self { x, y, theta }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadrotorState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

impl QuadrotorState {
    pub fn to_array(self) -> [f64; 6] {
        let [px, py, pz] = self.position;
        let [vx, vy, vz] = self.velocity;
        [px, py, pz, vx, vy, vz]
    }
}

impl From<[f64; 6]> for QuadrotorState {
    fn from(s: [f64; 6]) -> Self {
        Self {
            position: [s[0], s[1], s[2]],
            velocity: [s[3], s[4], s[5]],
        }
    }
}

/// Unicycle kinematics with input `(v, w)`.
pub fn diff_drive_derivative(state: &DiffDriveState, v: f64, w: f64) -> [f64; 3] {
    let (s, c) = state.theta.sin_cos();
    [v * c, v * s, w]
}

/// Point mass under commanded acceleration and gravity.
pub fn quadrotor_derivative(state: &QuadrotorState, accel: [f64; 3]) -> [f64; 6] {
    let [vx, vy, vz] = state.velocity;
    [vx, vy, vz, accel[0], accel[1], accel[2] - GRAVITY]
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiffDrive;

impl Dynamics for DiffDrive {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn position_dim(&self) -> usize {
        2
    }

    fn derivative(&self, state: &[f64], input: &[f64], out: &mut [f64]) {
        let (s, c) = state[2].sin_cos();
        out[0] = input[0] * c;
        out[1] = input[0] * s;
        out[2] = input[1];
    }

    fn state_distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let dth = wrap_angle(a[2] - b[2]);
        dx * dx + dy * dy + dth * dth
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMassQuadrotor {
    pub gravity: f64,
}

impl Default for PointMassQuadrotor {
    fn default() -> Self {
        Self { gravity: GRAVITY }
    }
}

impl Dynamics for PointMassQuadrotor {
    fn state_dim(&self) -> usize {
        6
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn position_dim(&self) -> usize {
        3
    }

    fn derivative(&self, state: &[f64], input: &[f64], out: &mut [f64]) {
        out[..3].copy_from_slice(&state[3..6]);
        out[3] = input[0];
        out[4] = input[1];
        out[5] = input[2] - self.gravity;
    }

    fn rest_input(&self) -> Vec<f64> {
        vec![0.0, 0.0, self.gravity]
    }
}

/// The two benchmark models behind one concrete type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Model {
    DiffDrive(DiffDrive),
    Quadrotor(PointMassQuadrotor),
}

impl Model {
    pub fn diff_drive() -> Self {
        Model::DiffDrive(DiffDrive)
    }

    pub fn quadrotor() -> Self {
        Model::Quadrotor(PointMassQuadrotor::default())
    }
}

impl Dynamics for Model {
    fn state_dim(&self) -> usize {
        match self {
            Model::DiffDrive(m) => m.state_dim(),
            Model::Quadrotor(m) => m.state_dim(),
        }
    }
    fn input_dim(&self) -> usize {
        match self {
            Model::DiffDrive(m) => m.input_dim(),
            Model::Quadrotor(m) => m.input_dim(),
        }
    }
    fn position_dim(&self) -> usize {
        match self {
            Model::DiffDrive(m) => m.position_dim(),
            Model::Quadrotor(m) => m.position_dim(),
        }
    }
    fn derivative(&self, state: &[f64], input: &[f64], out: &mut [f64]) {
        match self {
            Model::DiffDrive(m) => m.derivative(state, input, out),
            Model::Quadrotor(m) => m.derivative(state, input, out),
        }
    }
    fn state_distance_sq(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Model::DiffDrive(m) => m.state_distance_sq(a, b),
            Model::Quadrotor(m) => m.state_distance_sq(a, b),
        }
    }
    fn rest_input(&self) -> Vec<f64> {
        match self {
            Model::DiffDrive(m) => m.rest_input(),
            Model::Quadrotor(m) => m.rest_input(),
        }
    }
}

/// One RK4 step of signed length `h` writing into `out`. Returns `false`
/// when a non-finite value appears.
fn rk4_step_into<M: Dynamics + ?Sized>(
    model: &M,
    x: &[f64],
    u_anchor: &[f64],
    u_far: &[f64],
    h: f64,
    out: &mut [f64],
) -> bool {
    let n = model.state_dim();
    let m = model.input_dim();
    let mut mid = [0.0; MAX_DIM];
    for i in 0..m {
        mid[i] = 0.5 * (u_anchor[i] + u_far[i]);
    }
    let mid = &mid[..m];

    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut probe = [0.0; MAX_DIM];

    model.derivative(x, u_anchor, &mut k1[..n]);
    for i in 0..n {
        probe[i] = x[i] + 0.5 * h * k1[i];
    }
    model.derivative(&probe[..n], mid, &mut k2[..n]);
    for i in 0..n {
        probe[i] = x[i] + 0.5 * h * k2[i];
    }
    model.derivative(&probe[..n], mid, &mut k3[..n]);
    for i in 0..n {
        probe[i] = x[i] + h * k3[i];
    }
    model.derivative(&probe[..n], u_far, &mut k4[..n]);

    let mut finite = true;
    for i in 0..n {
        out[i] = x[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
        finite &= out[i].is_finite();
    }
    finite
}

fn check_dims<M: Dynamics + ?Sized>(model: &M, x: &[f64], inputs: &[&[f64]]) -> Result<()> {
    let (n, m) = (model.state_dim(), model.input_dim());
    if n > MAX_DIM || m > MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "model dimensions exceed MAX_DIM = {MAX_DIM}"
        )));
    }
    if x.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: x.len(),
        });
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != m) {
        return Err(Error::Dimension {
            expected: m,
            actual: u.len(),
        });
    }
    Ok(())
}

/// Successor of `x` after one step driven by `u_t` blending into `u_next`.
pub fn rk4_forward<M: Dynamics + ?Sized>(
    model: &M,
    x: &[f64],
    u: &[f64],
    u_next: &[f64],
    dt: StepSize,
) -> Result<Vec<f64>> {
    check_dims(model, x, &[u, u_next])?;
    let mut out = vec![0.0; x.len()];
    if rk4_step_into(model, x, u, u_next, dt.get(), &mut out) {
        Ok(out)
    } else {
        Err(Error::NonFinite)
    }
}

/// Predecessor of `x`: integrates the same ODE one step back in time,
/// anchored at `u_t` and blending into `u_prev`.
pub fn rk4_backward<M: Dynamics + ?Sized>(
    model: &M,
    x: &[f64],
    u: &[f64],
    u_prev: &[f64],
    dt: StepSize,
) -> Result<Vec<f64>> {
    check_dims(model, x, &[u, u_prev])?;
    let mut out = vec![0.0; x.len()];
    if rk4_step_into(model, x, u, u_prev, -dt.get(), &mut out) {
        Ok(out)
    } else {
        Err(Error::NonFinite)
    }
}

/// Rolls `controls` out from `start`. Forward rollouts anchor index 0,
/// backward rollouts anchor index `T` and fill towards 0. The result always
/// has `T + 1` states in chronological order.
pub fn rollout<M: Dynamics + ?Sized>(
    model: &M,
    start: &[f64],
    controls: &ControlSequence,
    direction: Direction,
    dt: StepSize,
) -> Result<StateTrajectory> {
    check_dims(model, start, &[controls.input(0)])?;
    let n = model.state_dim();
    let horizon = controls.horizon();
    let mut data = vec![0.0; (horizon + 1) * n];
    let h = dt.get();
    match direction {
        Direction::Forward => {
            data[..n].copy_from_slice(start);
            for t in 0..horizon {
                let u = controls.input(t);
                let u_far = controls.input((t + 1).min(horizon - 1));
                let (done, rest) = data.split_at_mut((t + 1) * n);
                if !rk4_step_into(model, &done[t * n..], u, u_far, h, &mut rest[..n]) {
                    return Err(Error::NonFinite);
                }
            }
        }
        Direction::Backward => {
            data[horizon * n..].copy_from_slice(start);
            for t in (0..horizon).rev() {
                let u = controls.input(t);
                let u_far = controls.input(t.saturating_sub(1));
                let (head, tail) = data.split_at_mut((t + 1) * n);
                if !rk4_step_into(model, &tail[..n], u, u_far, -h, &mut head[t * n..]) {
                    return Err(Error::NonFinite);
                }
            }
        }
    }
    Ok(StateTrajectory::from_raw(n, data))
}
