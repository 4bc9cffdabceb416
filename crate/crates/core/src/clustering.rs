//! Rollout clustering: feature extraction, DBSCAN and per-cluster
//! softmax averaging (the Cluster-MPPI update).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::constraints::InputConstraint;
use crate::dynamics::{rollout, Direction, Dynamics};
use crate::error::{Error, PlanError, Result};
use crate::mppi::{
    argmin_cost, sample_batch, softmax_weights, weighted_average, Cost, CostModel, NoiseSpec,
    PlanningContext, RolloutBatch, TrajectoryCost,
};
use crate::trajectory::ControlSequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighbors (self included) needed for a core point.
    pub min_points: usize,
    pub eps_max: f64,
    /// Weight of the normalized-cost coordinate in the feature vector.
    pub cost_weight: f64,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            min_points: 5,
            eps_max: 0.05,
            cost_weight: 1.0,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_points == 0 {
            return Err(Error::InvalidParameter("min_points must be at least 1".into()));
        }
        if !(self.eps_max > 0.0) {
            return Err(Error::InvalidParameter("eps_max must be positive".into()));
        }
        if !(self.cost_weight >= 0.0) {
            return Err(Error::InvalidParameter("cost_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// How a rollout is summarized before clustering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScheme {
    /// Time-mean of the whitened noise (`m` values).
    #[default]
    TimeMean,
    /// Whole whitened noise sequence scaled by `1/sqrt(T)` (`T*m` values),
    /// so distances stay comparable with `TimeMean`.
    Flattened,
}

/// One row per feasible sample, with the sample index it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    indices: Vec<usize>,
    sample_count: usize,
}

impl FeatureMatrix {
    /// Points with identity index mapping.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidParameter("points must share a non-zero dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("features must be finite".into()));
        }
        Ok(Self {
            dim,
            data: points.concat(),
            indices: (0..points.len()).collect(),
            sample_count: points.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Sample index behind each row.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Size of the batch the rows were drawn from.
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

pub fn build_features(
    batch: &RolloutBatch,
    noise: &NoiseSpec,
    cost_weight: f64,
    scheme: FeatureScheme,
) -> Result<FeatureMatrix, PlanError> {
    let indices = batch.feasible_indices();
    if indices.is_empty() {
        return Err(PlanError::NoValidSample);
    }
    let (lo, hi) = indices
        .iter()
        .filter_map(|&k| batch.costs[k].value())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = hi - lo;

    let m = noise.dim();
    let horizon = batch.noises[indices[0]].horizon();
    let dim = match scheme {
        FeatureScheme::TimeMean => m + 1,
        FeatureScheme::Flattened => horizon * m + 1,
    };
    let std = noise.std_dev();
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &k in &indices {
        let eps = &batch.noises[k];
        match scheme {
            FeatureScheme::TimeMean => {
                let mut mean = vec![0.0; m];
                for e in eps.iter() {
                    for i in 0..m {
                        mean[i] += e[i] / std[i];
                    }
                }
                data.extend(mean.iter().map(|s| s / horizon as f64));
            }
            FeatureScheme::Flattened => {
                let scale = 1.0 / (horizon as f64).sqrt();
                for e in eps.iter() {
                    data.extend((0..m).map(|i| e[i] / std[i] * scale));
                }
            }
        }
        let j = batch.costs[k].value().unwrap_or(lo);
        let normalized = if span > 0.0 { (j - lo) / span } else { 0.0 };
        data.push(cost_weight * normalized);
    }
    Ok(FeatureMatrix {
        dim,
        data,
        indices,
        sample_count: batch.len(),
    })
}

/// Disjoint clusters of sample indices, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<usize>>,
    /// True when DBSCAN found nothing and every sample was put in one cluster.
    pub fallback: bool,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Plain DBSCAN with Euclidean distance and O(n^2) region queries.
///
/// Points are scanned in row order; each unvisited core point opens a new
/// cluster which is expanded breadth-first before the scan resumes. A border
/// point reachable from several clusters stays with the first one that
/// reached it. When no cluster forms, all `sample_count` samples are
/// returned as one cluster.
pub fn dbscan(features: &FeatureMatrix, params: &DbscanParams) -> ClusterSet {
    let n = features.rows();
    let eps_sq = params.eps_max * params.eps_max;
    let region = |i: usize| -> Vec<usize> {
        let a = features.row(i);
        (0..n)
            .filter(|&j| {
                let b = features.row(j);
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() <= eps_sq
            })
            .collect()
    };

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut members: Vec<Vec<usize>> = Vec::new();

    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = region(i);
        if seeds.len() < params.min_points {
            continue;
        }
        let cid = members.len();
        members.push(Vec::new());
        label[i] = Some(cid);
        let mut queue: VecDeque<usize> = seeds.into();
        while let Some(j) = queue.pop_front() {
            if label[j].is_none() {
                label[j] = Some(cid);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let next = region(j);
            if next.len() >= params.min_points {
                queue.extend(next.into_iter().filter(|&q| !visited[q] || label[q].is_none()));
            }
        }
    }

    for (row, l) in label.iter().enumerate() {
        if let Some(c) = l {
            members[*c].push(features.indices()[row]);
        }
    }
    if members.is_empty() {
        return ClusterSet {
            clusters: vec![(0..features.sample_count()).collect()],
            fallback: true,
        };
    }
    for m in &mut members {
        m.sort_unstable();
    }
    ClusterSet {
        clusters: members,
        fallback: false,
    }
}

/// Softmax average inside each cluster, each with its own cost baseline.
pub fn cluster_controls(
    batch: &RolloutBatch,
    clusters: &ClusterSet,
    gamma: f64,
    constraint: &InputConstraint,
) -> Result<Vec<ControlSequence>, PlanError> {
    clusters
        .clusters
        .iter()
        .map(|c| weighted_average(batch, c, gamma, constraint))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    pub noise: NoiseSpec,
    pub samples: usize,
    pub dbscan: DbscanParams,
    pub features: FeatureScheme,
}

/// Result of one sample-cluster-average pass.
#[derive(Clone, Debug)]
pub struct ClusteredPass {
    pub batch: RolloutBatch,
    pub clusters: ClusterSet,
    pub controls: Vec<ControlSequence>,
}

#[allow(clippy::too_many_arguments)]
pub fn clustered_pass<M, C>(
    ctx: &PlanningContext<M>,
    base: &ControlSequence,
    start: &[f64],
    direction: Direction,
    config: &ClusterConfig,
    cost: &C,
    seed: u64,
) -> Result<ClusteredPass>
where
    M: Dynamics,
    C: TrajectoryCost<M> + ?Sized,
{
    config.dbscan.validate()?;
    let batch = sample_batch(ctx, base, &config.noise, config.samples, start, direction, cost, seed)?;
    let features = build_features(&batch, &config.noise, config.dbscan.cost_weight, config.features)?;
    let clusters = dbscan(&features, &config.dbscan);
    let controls = cluster_controls(&batch, &clusters, config.noise.gamma, &ctx.input_constraint)?;
    Ok(ClusteredPass {
        batch,
        clusters,
        controls,
    })
}

/// One Cluster-MPPI iteration: the cluster average with the lowest rollout
/// cost wins. If every average collides, the best single sample is used.
pub fn cluster_mppi_step<M: Dynamics>(
    ctx: &PlanningContext<M>,
    base: &ControlSequence,
    x_init: &[f64],
    config: &ClusterConfig,
    cost: &CostModel,
    seed: u64,
) -> Result<ControlSequence> {
    let pass = clustered_pass(ctx, base, x_init, Direction::Forward, config, cost, seed)?;
    let costs: Vec<Cost> = pass
        .controls
        .iter()
        .map(|u| match rollout(&ctx.model, x_init, u, Direction::Forward, ctx.dt) {
            Ok(traj) => cost.evaluate(&ctx.model, &traj, u, &ctx.state_constraint, Direction::Forward),
            Err(_) => Cost::Infeasible(crate::constraints::Infeasibility::NonFinite),
        })
        .collect();
    if let Some(best) = argmin_cost(&costs) {
        return Ok(pass.controls[best].clone());
    }
    match argmin_cost(&pass.batch.costs) {
        Some(k) => Ok(pass.batch.inputs[k].clone()),
        None => Err(PlanError::NoValidSample.into()),
    }
}

/// Normalized weights of each cluster, for diagnostics and tests.
pub fn cluster_weights(
    batch: &RolloutBatch,
    clusters: &ClusterSet,
    gamma: f64,
) -> Result<Vec<Vec<f64>>, PlanError> {
    clusters
        .clusters
        .iter()
        .map(|c| softmax_weights(&batch.costs, c, gamma))
        .collect()
}
