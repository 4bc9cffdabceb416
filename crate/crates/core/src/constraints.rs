//! Input constraint sets with Euclidean projection, and the state
//! indicator that flags collisions and bound violations.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::environment::OccupancyGrid;
use crate::error::{Error, Result};
use crate::trajectory::ControlSequence;

/// Relative slack under which a point already counts as inside a
/// `NormCone`, so that projecting a projected point returns it untouched.
const CONE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum InputConstraint {
    /// Componentwise bounds.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{a in R^3 : |a| <= a_max, |a| cos(theta_max) <= a_z}`: a thrust cone
    /// around +z capped by a ball.
    NormCone { a_max: f64, theta_max: f64 },
}

impl InputConstraint {
    pub fn bounds(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter("box bounds must have equal, non-zero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter("box requires lower <= upper".into()));
        }
        Ok(InputConstraint::Box { lower, upper })
    }

    pub fn norm_cone(a_max: f64, theta_max: f64) -> Result<Self> {
        if !(a_max > 0.0 && a_max.is_finite()) {
            return Err(Error::InvalidParameter("a_max must be positive".into()));
        }
        if !(theta_max > 0.0 && theta_max < FRAC_PI_2) {
            return Err(Error::InvalidParameter("theta_max must lie in (0, pi/2)".into()));
        }
        Ok(InputConstraint::NormCone { a_max, theta_max })
    }

    pub fn dim(&self) -> usize {
        match self {
            InputConstraint::Box { lower, .. } => lower.len(),
            InputConstraint::NormCone { .. } => 3,
        }
    }

    /// Membership with absolute slack `tol`.
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            InputConstraint::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            InputConstraint::NormCone { a_max, theta_max } => {
                let norm = norm3(u);
                norm <= a_max + tol && norm * theta_max.cos() <= u[2] + tol
            }
        }
    }

    pub fn project_in_place(&self, u: &mut [f64]) {
        match self {
            InputConstraint::Box { lower, upper } => {
                for ((v, l), h) in u.iter_mut().zip(lower).zip(upper) {
                    *v = v.clamp(*l, *h);
                }
            }
            InputConstraint::NormCone { a_max, theta_max } => {
                project_cone_ball(u, *a_max, *theta_max);
            }
        }
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        let mut out = u.to_vec();
        self.project_in_place(&mut out);
        out
    }

    /// Projects every input of the sequence; the constraint is separable in time.
    pub fn project_sequence(&self, controls: &mut ControlSequence) {
        let dim = controls.dim();
        for u in controls.as_mut_slice().chunks_exact_mut(dim) {
            self.project_in_place(u);
        }
    }
}

fn norm3(u: &[f64]) -> f64 {
    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
}

/// Projection onto the second-order cone `{|a_xy| <= tan(theta) a_z}`
/// followed by radial scaling into the ball; for a cone with apex at the
/// ball center the composition is the projection onto the intersection.
fn project_cone_ball(u: &mut [f64], a_max: f64, theta_max: f64) {
    let (sin_t, cos_t) = theta_max.sin_cos();
    let radial = u[0].hypot(u[1]);
    let z = u[2];
    let norm = radial.hypot(z);
    let tol = CONE_SLACK * norm.max(1.0);

    let in_cone = radial * cos_t <= z * sin_t + tol;
    if !in_cone {
        // Polar cone: everything there projects to the apex.
        if radial * sin_t <= -z * cos_t {
            u[..3].fill(0.0);
            return;
        }
        // Nearest point on the boundary ray (sin t * e_r + cos t * e_z).
        let along = radial * sin_t + z * cos_t;
        let (ex, ey) = if radial > 0.0 {
            (u[0] / radial, u[1] / radial)
        } else {
            (0.0, 0.0)
        };
        u[0] = along * sin_t * ex;
        u[1] = along * sin_t * ey;
        u[2] = along * cos_t;
    }

    let norm = norm3(u);
    if norm > a_max * (1.0 + CONE_SLACK) {
        let scale = a_max / norm;
        for v in &mut u[..3] {
            *v *= scale;
        }
    }
}

/// Why a state was rejected by the indicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasibility {
    Collision,
    StateBound,
    NonFinite,
}

/// How positions outside the grid are treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Everything outside the grid is a collision.
    #[default]
    Closed,
    /// Side walls only: beyond the bottom or top edge is free space.
    OpenEnds,
}

/// Obstacle map plus optional per-coordinate state bounds.
#[derive(Clone, Debug)]
pub struct StateConstraint {
    pub grid: Arc<OccupancyGrid>,
    /// `(lower, upper)` per state coordinate; use infinities for "unbounded".
    pub bounds: Option<Vec<(f64, f64)>>,
    pub boundary: Boundary,
}

impl StateConstraint {
    pub fn new(grid: Arc<OccupancyGrid>) -> Self {
        Self {
            grid,
            bounds: None,
            boundary: Boundary::Closed,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.bounds = Some(bounds);
        self
    }

    /// `None` for an admissible state (indicator value 0), otherwise the
    /// reason it is infinite.
    pub fn indicator<M: Dynamics + ?Sized>(&self, model: &M, state: &[f64]) -> Option<Infeasibility> {
        if state.iter().any(|v| !v.is_finite()) {
            return Some(Infeasibility::NonFinite);
        }
        let p = model.position(state);
        let hit = match self.boundary {
            Boundary::Closed => self.grid.is_colliding(p),
            Boundary::OpenEnds => self.grid.is_colliding_open_ends(p),
        };
        if hit {
            return Some(Infeasibility::Collision);
        }
        if let Some(bounds) = &self.bounds {
            if state
                .iter()
                .zip(bounds)
                .any(|(v, (lo, hi))| *v < *lo || *v > *hi)
            {
                return Some(Infeasibility::StateBound);
            }
        }
        None
    }
}
