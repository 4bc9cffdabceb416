//! Time-indexed input and state sequences stored as flat row-major buffers.

use crate::error::{Error, Result};

/// `horizon` inputs of dimension `dim`, `u_0 .. u_{T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence {
    dim: usize,
    data: Vec<f64>,
}

impl ControlSequence {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "control buffer of length {} is not a non-empty multiple of {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("control entries must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(horizon: usize, dim: usize) -> Self {
        assert!(horizon >= 1 && dim >= 1, "empty control sequence");
        Self {
            dim,
            data: vec![0.0; horizon * dim],
        }
    }

    /// Repeats `input` over the horizon.
    pub fn constant(horizon: usize, input: &[f64]) -> Self {
        assert!(horizon >= 1 && !input.is_empty(), "empty control sequence");
        Self {
            dim: input.len(),
            data: input.repeat(horizon),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParameter("ragged control rows".into()));
        }
        Self::new(dim, rows.concat())
    }

    /// Builds a sequence without validation; callers guarantee shape.
    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn input(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn input_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// First `horizon` inputs, or a clone when already that short.
    pub fn truncated(&self, horizon: usize) -> Self {
        let len = horizon.max(1).min(self.horizon()) * self.dim;
        Self::from_raw(self.dim, self.data[..len].to_vec())
    }

    pub fn push(&mut self, input: &[f64]) {
        assert_eq!(input.len(), self.dim);
        self.data.extend_from_slice(input);
    }
}

/// States `x_0 .. x_T` of dimension `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    dim: usize,
    data: Vec<f64>,
}

impl StateTrajectory {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "state buffer of length {} is not a non-empty multiple of {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub(crate) fn from_raw(dim: usize, data: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim));
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states (horizon + 1 for a full rollout).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn push(&mut self, state: &[f64]) {
        assert_eq!(state.len(), self.dim);
        self.data.extend_from_slice(state);
    }
}
