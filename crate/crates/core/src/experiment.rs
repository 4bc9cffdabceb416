//! Benchmark suites: configuration, batch execution over maps and starts,
//! aggregation and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bic::{BicConfig, GuideWeights};
use crate::closed_loop::{
    closed_loop_drive, Algorithm, BicPlanner, ClusterMppiPlanner, DriveSettings, FailureReason, MppiPlanner,
    Planner,
};
use crate::clustering::{ClusterConfig, DbscanParams, FeatureScheme};
use crate::constraints::{Boundary, InputConstraint, StateConstraint};
use crate::dynamics::{Dynamics, Model, StepSize};
use crate::environment::{generate_map, load_map, save_map, MapSpec, OccupancyGrid};
use crate::error::{Error, Result};
use crate::mppi::{CostModel, MppiConfig, NoiseSpec, PlanningContext};
use crate::trajectory::StateTrajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DiffDrive,
    Quadrotor,
}

impl ModelKind {
    pub fn model(self) -> Model {
        match self {
            ModelKind::DiffDrive => Model::diff_drive(),
            ModelKind::Quadrotor => Model::quadrotor(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DiffDrive => "diffdrive",
            ModelKind::Quadrotor => "quadrotor",
        }
    }

    /// Column names of the state vector in trajectory dumps.
    pub fn state_labels(self) -> &'static [&'static str] {
        match self {
            ModelKind::DiffDrive => &["x", "y", "theta"],
            ModelKind::Quadrotor => &["x", "y", "z", "vx", "vy", "vz"],
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffdrive" => Ok(ModelKind::DiffDrive),
            "quadrotor" => Ok(ModelKind::Quadrotor),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Where a suite gets its maps from.
#[derive(Clone, Debug, PartialEq)]
pub enum MapSource {
    /// Every `*.map` file in the directory, sorted by file name; the map id
    /// is the file stem.
    Directory(PathBuf),
    /// `count` maps from `spec`, the i-th seeded with `derive_map_seed(seed, i)`.
    Generate { count: usize, spec: MapSpec },
}

/// A fully resolved experiment. Build it with [`ExperimentConfig::parse`]
/// or start from [`ExperimentConfig::defaults`] and edit fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    pub model: ModelKind,
    pub maps: MapSource,
    pub starts: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
    /// Diagonal of the noise covariance.
    pub sigma: Vec<f64>,
    pub gamma: f64,
    pub horizon: Option<usize>,
    pub samples: Option<usize>,
    pub horizon_f: Option<usize>,
    pub horizon_b: Option<usize>,
    pub samples_f: Option<usize>,
    pub samples_b: Option<usize>,
    pub samples_g: Option<usize>,
    pub dbscan: DbscanParams,
    pub features: FeatureScheme,
    pub guide: GuideWeights,
    pub dt: f64,
    pub terminal_weight: f64,
    pub stage_weight: f64,
    pub input_weights: Vec<f64>,
    pub v_max: f64,
    pub w_max: f64,
    pub a_max: f64,
    pub theta_max_deg: f64,
    /// Optional altitude bounds for the quadrotor.
    pub z_bounds: Option<(f64, f64)>,
    pub boundary: Boundary,
    pub max_iters: usize,
    pub err: f64,
    pub max_retries: usize,
    pub seed: u64,
    pub dump_trajectories: bool,
    /// Keys given explicitly in the source file.
    pub explicit_keys: BTreeSet<String>,
}

const KEYS: &[&str] = &[
    "algorithm",
    "model",
    "maps_dir",
    "map_count",
    "map_seed",
    "obstacles",
    "obstacle_radius",
    "inflation",
    "resolution",
    "starts",
    "goal",
    "sigma",
    "gamma",
    "horizon",
    "samples",
    "horizon_f",
    "horizon_b",
    "samples_f",
    "samples_b",
    "samples_g",
    "min_points",
    "eps_max",
    "cost_weight",
    "features",
    "lambda_x",
    "lambda_u",
    "eps_goal",
    "dt",
    "terminal_weight",
    "stage_weight",
    "input_weights",
    "v_max",
    "w_max",
    "a_max",
    "theta_max_deg",
    "z_bounds",
    "boundary",
    "max_iters",
    "err",
    "max_retries",
    "seed",
    "dump_trajectories",
];

fn applies_to(key: &str, alg: Algorithm) -> bool {
    match key {
        "horizon" | "samples" => alg != Algorithm::BicMppi,
        "horizon_f" | "horizon_b" | "samples_f" | "samples_b" | "samples_g" | "lambda_x" | "lambda_u"
        | "eps_goal" => alg == Algorithm::BicMppi,
        "min_points" | "eps_max" | "cost_weight" | "features" => alg != Algorithm::Mppi,
        _ => true,
    }
}

fn applies_to_model(key: &str, model: ModelKind) -> bool {
    match key {
        "v_max" | "w_max" => model == ModelKind::DiffDrive,
        "a_max" | "theta_max_deg" | "z_bounds" => model == ModelKind::Quadrotor,
        _ => true,
    }
}

/// Reads a number, also accepting multiples and fractions of `pi` such as
/// `pi/2`, `-pi/4` or `2*pi`.
pub fn parse_number(token: &str) -> Result<f64> {
    let t = token.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let bad = || Error::Config(format!("`{t}` is not a number"));
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) => (-1.0, rest.trim()),
        None => (1.0, t),
    };
    let (numer, denom) = match body.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim().parse::<f64>().map_err(|_| bad())?),
        None => (body, 1.0),
    };
    let factor = match numer.split_once('*') {
        Some((k, p)) if p.trim() == "pi" => k.trim().parse::<f64>().map_err(|_| bad())?,
        None if numer == "pi" => 1.0,
        _ => return Err(bad()),
    };
    Ok(sign * factor * std::f64::consts::PI / denom)
}

fn parse_list(value: &str) -> Result<Vec<f64>> {
    value.split(',').map(parse_number).collect()
}

fn parse_usize(value: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{value}` is not a non-negative integer")))
}

fn parse_u64(value: &str) -> Result<u64> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{value}` is not a non-negative integer")))
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!("`{other}` is not true/false"))),
    }
}

impl ExperimentConfig {
    /// Defaults for `model`: the standard arena and start/goal pairs. No
    /// algorithm, horizons or sample counts are set.
    pub fn defaults(model: ModelKind) -> Self {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let (starts, goal, m, eps_max) = match model {
            ModelKind::DiffDrive => (
                vec![vec![0.5, 0.0, half_pi], vec![2.5, 0.0, half_pi]],
                vec![1.5, 5.0, half_pi],
                2,
                DbscanParams::default().eps_max,
            ),
            ModelKind::Quadrotor => (
                vec![vec![1.5, 0.0, 5.0, 0.0, 0.0, 0.0]],
                vec![1.5, 5.0, 0.0, 0.0, 0.0, 0.0],
                3,
                0.085,
            ),
        };
        Self {
            algorithms: Vec::new(),
            model,
            maps: MapSource::Generate {
                count: 1,
                spec: MapSpec::default(),
            },
            starts,
            goal,
            sigma: vec![0.25; m],
            gamma: 10.0,
            horizon: None,
            samples: None,
            horizon_f: None,
            horizon_b: None,
            samples_f: None,
            samples_b: None,
            samples_g: None,
            dbscan: DbscanParams {
                eps_max,
                ..DbscanParams::default()
            },
            features: FeatureScheme::TimeMean,
            guide: GuideWeights::default(),
            dt: 0.1,
            terminal_weight: 50.0,
            stage_weight: 5.0,
            input_weights: vec![0.0; m],
            v_max: 1.0,
            w_max: std::f64::consts::FRAC_PI_4,
            a_max: 20.0,
            theta_max_deg: 60.0,
            z_bounds: None,
            boundary: Boundary::OpenEnds,
            max_iters: 200,
            err: 0.1,
            max_retries: 2,
            seed: 0,
            dump_trajectories: false,
            explicit_keys: BTreeSet::new(),
        }
    }

    /// Parses the flat `key = value` format. Relative `maps_dir` paths are
    /// resolved against `base_dir`. The result is not yet validated.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", i + 1)));
            }
            if entries.insert(key.to_string(), (i + 1, value.trim().to_string())).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }

        let model: ModelKind = match entries.get("model") {
            Some((_, v)) => v.parse()?,
            None => ModelKind::DiffDrive,
        };
        let mut cfg = Self::defaults(model);
        let mut spec = MapSpec::default();
        let mut map_count = 1;
        let mut map_seed = None;

        for (key, (line, value)) in &entries {
            let v = value.as_str();
            let ctx = |e: Error| Error::Config(format!("line {line} (`{key}`): {e}"));
            (|| -> Result<()> {
                match key.as_str() {
                    "algorithm" => {
                        cfg.algorithms = v.split(',').map(|a| a.trim().parse()).collect::<Result<_>>()?;
                    }
                    "model" => {}
                    "maps_dir" => cfg.maps = MapSource::Directory(base_dir.join(v)),
                    "map_count" => map_count = parse_usize(v)?,
                    "map_seed" => map_seed = Some(parse_u64(v)?),
                    "obstacles" => spec.obstacle_count = parse_usize(v)?,
                    "obstacle_radius" => spec.obstacle_radius = parse_number(v)?,
                    "inflation" => spec.inflation_radius = parse_number(v)?,
                    "resolution" => spec.resolution = parse_number(v)?,
                    "starts" => cfg.starts = v.split(';').map(parse_list).collect::<Result<_>>()?,
                    "goal" => cfg.goal = parse_list(v)?,
                    "sigma" => cfg.sigma = parse_list(v)?,
                    "gamma" => cfg.gamma = parse_number(v)?,
                    "horizon" => cfg.horizon = Some(parse_usize(v)?),
                    "samples" => cfg.samples = Some(parse_usize(v)?),
                    "horizon_f" => cfg.horizon_f = Some(parse_usize(v)?),
                    "horizon_b" => cfg.horizon_b = Some(parse_usize(v)?),
                    "samples_f" => cfg.samples_f = Some(parse_usize(v)?),
                    "samples_b" => cfg.samples_b = Some(parse_usize(v)?),
                    "samples_g" => cfg.samples_g = Some(parse_usize(v)?),
                    "min_points" => cfg.dbscan.min_points = parse_usize(v)?,
                    "eps_max" => cfg.dbscan.eps_max = parse_number(v)?,
                    "cost_weight" => cfg.dbscan.cost_weight = parse_number(v)?,
                    "features" => {
                        cfg.features = match v {
                            "time-mean" => FeatureScheme::TimeMean,
                            "flattened" => FeatureScheme::Flattened,
                            other => return Err(Error::Config(format!("unknown feature scheme `{other}`"))),
                        }
                    }
                    "lambda_x" => cfg.guide.lambda_x = parse_number(v)?,
                    "lambda_u" => cfg.guide.lambda_u = parse_number(v)?,
                    "eps_goal" => cfg.guide.eps_goal = parse_number(v)?,
                    "dt" => cfg.dt = parse_number(v)?,
                    "terminal_weight" => cfg.terminal_weight = parse_number(v)?,
                    "stage_weight" => cfg.stage_weight = parse_number(v)?,
                    "input_weights" => cfg.input_weights = parse_list(v)?,
                    "v_max" => cfg.v_max = parse_number(v)?,
                    "w_max" => cfg.w_max = parse_number(v)?,
                    "a_max" => cfg.a_max = parse_number(v)?,
                    "theta_max_deg" => cfg.theta_max_deg = parse_number(v)?,
                    "z_bounds" => {
                        let b = parse_list(v)?;
                        if b.len() != 2 {
                            return Err(Error::Config("z_bounds takes two values".into()));
                        }
                        cfg.z_bounds = Some((b[0], b[1]));
                    }
                    "boundary" => {
                        cfg.boundary = match v {
                            "closed" => Boundary::Closed,
                            "open-ends" => Boundary::OpenEnds,
                            other => return Err(Error::Config(format!("unknown boundary `{other}`"))),
                        }
                    }
                    "max_iters" => cfg.max_iters = parse_usize(v)?,
                    "err" => cfg.err = parse_number(v)?,
                    "max_retries" => cfg.max_retries = parse_usize(v)?,
                    "seed" => cfg.seed = parse_u64(v)?,
                    "dump_trajectories" => cfg.dump_trajectories = parse_bool(v)?,
                    _ => unreachable!("key list and match arms agree"),
                }
                Ok(())
            })()
            .map_err(ctx)?;
        }

        if !matches!(cfg.maps, MapSource::Directory(_)) {
            spec.rng_seed = map_seed.unwrap_or(cfg.seed);
            cfg.maps = MapSource::Generate { count: map_count, spec };
        } else {
            for k in ["map_count", "map_seed", "obstacles", "obstacle_radius", "inflation", "resolution"] {
                if entries.contains_key(k) {
                    warn!("`{k}` is ignored because `maps_dir` is set");
                }
            }
        }
        cfg.explicit_keys = entries.into_keys().collect();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Checks everything a suite needs before any trial runs. Returns the
    /// warnings for keys that no selected algorithm or model uses.
    pub fn validate(&self) -> Result<Vec<String>> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.algorithms.is_empty() {
            return cfg_err("`algorithm` is required".into());
        }
        let model = self.model.model();
        let (n, m) = (model.state_dim(), model.input_dim());
        if self.starts.is_empty() {
            return cfg_err("at least one start is required".into());
        }
        for (i, s) in self.starts.iter().enumerate() {
            if s.len() != n {
                return cfg_err(format!("start {i} has {} values, the model needs {n}", s.len()));
            }
        }
        if self.goal.len() != n {
            return cfg_err(format!("goal has {} values, the model needs {n}", self.goal.len()));
        }
        if self.sigma.len() != m || self.input_weights.len() != m {
            return cfg_err(format!("`sigma` and `input_weights` need {m} values"));
        }
        for alg in &self.algorithms {
            let required: &[(&str, Option<usize>)] = match alg {
                Algorithm::Mppi | Algorithm::ClusterMppi => {
                    &[("horizon", self.horizon), ("samples", self.samples)]
                }
                Algorithm::BicMppi => &[
                    ("horizon_f", self.horizon_f),
                    ("horizon_b", self.horizon_b),
                    ("samples_f", self.samples_f),
                    ("samples_b", self.samples_b),
                    ("samples_g", self.samples_g),
                ],
            };
            for (key, value) in required {
                match value {
                    None => return cfg_err(format!("`{key}` is required for {alg}")),
                    Some(0) => return cfg_err(format!("`{key}` must be positive")),
                    Some(_) => {}
                }
            }
            if *alg != Algorithm::Mppi {
                self.dbscan.validate()?;
            }
        }
        NoiseSpec::new(&self.sigma, self.gamma)?;
        StepSize::new(self.dt)?;
        if !(self.err > 0.0) {
            return cfg_err("`err` must be positive".into());
        }
        if !(self.guide.eps_goal > 0.0) || self.guide.lambda_x < 0.0 || self.guide.lambda_u < 0.0 {
            return cfg_err("guide weights must be non-negative and eps_goal positive".into());
        }
        self.input_constraint()?;
        if let MapSource::Generate { spec, .. } = &self.maps {
            spec.validate()?;
        }

        let mut warnings = Vec::new();
        for key in &self.explicit_keys {
            let used = self.algorithms.iter().any(|a| applies_to(key, *a)) && applies_to_model(key, self.model);
            if !used {
                warnings.push(format!("`{key}` does not apply to this experiment and is ignored"));
            }
        }
        Ok(warnings)
    }

    pub fn input_constraint(&self) -> Result<InputConstraint> {
        match self.model {
            ModelKind::DiffDrive => InputConstraint::bounds(vec![0.0, -self.w_max], vec![self.v_max, self.w_max]),
            ModelKind::Quadrotor => InputConstraint::norm_cone(self.a_max, self.theta_max_deg.to_radians()),
        }
    }

    fn noise(&self) -> NoiseSpec {
        NoiseSpec::new(&self.sigma, self.gamma).expect("validated")
    }

    fn state_constraint(&self, grid: Arc<OccupancyGrid>) -> StateConstraint {
        let sc = StateConstraint::new(grid).with_boundary(self.boundary);
        match (self.model, self.z_bounds) {
            (ModelKind::Quadrotor, Some((lo, hi))) => {
                let inf = f64::INFINITY;
                sc.with_bounds(vec![(-inf, inf), (-inf, inf), (lo, hi), (-inf, inf), (-inf, inf), (-inf, inf)])
            }
            _ => sc,
        }
    }

    fn cluster_config(&self, samples: usize) -> ClusterConfig {
        ClusterConfig {
            noise: self.noise(),
            samples,
            dbscan: self.dbscan,
            features: self.features,
        }
    }

    fn planner(&self, alg: Algorithm, ctx: &PlanningContext<Model>) -> Box<dyn Planner<Model>> {
        let cost = CostModel::new(self.terminal_weight, self.input_weights.clone(), self.goal.clone())
            .with_stage_weight(self.stage_weight);
        match alg {
            Algorithm::Mppi => Box::new(MppiPlanner::new(
                ctx,
                MppiConfig {
                    noise: self.noise(),
                    samples: self.samples.expect("validated"),
                },
                cost,
                self.horizon.expect("validated"),
            )),
            Algorithm::ClusterMppi => Box::new(ClusterMppiPlanner::new(
                ctx,
                self.cluster_config(self.samples.expect("validated")),
                cost,
                self.horizon.expect("validated"),
            )),
            Algorithm::BicMppi => Box::new(BicPlanner::new(
                ctx,
                BicConfig {
                    forward: self.cluster_config(self.samples_f.expect("validated")),
                    backward: self.cluster_config(self.samples_b.expect("validated")),
                    guide_samples: self.samples_g.expect("validated"),
                    guide: self.guide,
                },
                cost,
                self.goal.clone(),
                self.horizon_f.expect("validated"),
                self.horizon_b.expect("validated"),
            )),
        }
    }
}

/// Seed of the i-th generated map.
pub fn derive_map_seed(seed: u64, index: usize) -> u64 {
    crate::mppi::derive_seed(seed, &[0x006d_6170, index as u64])
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed of one trial: the master seed xor a hash of `(map id, start id)`.
pub fn trial_seed(seed: u64, map_id: &str, start_id: usize) -> u64 {
    seed ^ fnv1a(format!("{map_id}\u{1f}{start_id}").as_bytes())
}

/// Loads or generates the maps of a suite, in a stable order.
pub fn resolve_maps(source: &MapSource) -> Result<Vec<(String, Arc<OccupancyGrid>)>> {
    match source {
        MapSource::Directory(dir) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::Config(format!("cannot read map directory {}: {e}", dir.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "map"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::Config(format!("no .map files in {}", dir.display())));
            }
            paths
                .iter()
                .map(|p| {
                    let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    let grid = load_map(p)
                        .map_err(|e| Error::Config(format!("cannot load {}: {e}", p.display())))?;
                    Ok((id, Arc::new(grid)))
                })
                .collect()
        }
        MapSource::Generate { count, spec } => (0..*count)
            .map(|i| {
                let spec = MapSpec {
                    rng_seed: derive_map_seed(spec.rng_seed, i),
                    ..spec.clone()
                };
                Ok((map_id(i), Arc::new(generate_map(&spec)?)))
            })
            .collect(),
    }
}

pub fn map_id(index: usize) -> String {
    format!("map_{index:03}")
}

/// Writes `count` generated maps as `map_000.map`, `map_001.map`, ... and
/// returns their paths.
pub fn write_generated_maps(dir: &Path, count: usize, spec: &MapSpec) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let maps = resolve_maps(&MapSource::Generate {
        count,
        spec: spec.clone(),
    })?;
    maps.iter()
        .map(|(id, grid)| {
            let path = dir.join(format!("{id}.map"));
            save_map(grid, &path)?;
            Ok(path)
        })
        .collect()
}

/// One closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub map_id: String,
    pub start_id: usize,
    pub success: bool,
    pub iterations: usize,
    pub max_iters: usize,
    pub wall_time_s: f64,
    pub terminal_error: f64,
    pub failure_reason: Option<FailureReason>,
}

/// A trial together with its executed states.
#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub result: TrialResult,
    pub states: StateTrajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub failures: usize,
    pub success_rate: f64,
    /// Mean iterations over successful trials; NaN when there are none.
    pub avg_iters: f64,
    /// Mean wall time over all trials.
    pub avg_time_s: f64,
    /// Quartiles of the terminal error over all trials.
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub rows: Vec<AlgorithmSummary>,
}

impl SummaryReport {
    pub fn get(&self, alg: Algorithm) -> Option<&AlgorithmSummary> {
        self.rows.iter().find(|r| r.algorithm == alg)
    }
}

/// Quantile by linear interpolation between order statistics at
/// position `q (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Per-algorithm aggregates, rows in order of first appearance.
pub fn summarize(results: &[TrialResult]) -> SummaryReport {
    let mut order: Vec<Algorithm> = Vec::new();
    for r in results {
        if !order.contains(&r.algorithm) {
            order.push(r.algorithm);
        }
    }
    let rows = order
        .into_iter()
        .map(|alg| {
            let mine: Vec<&TrialResult> = results.iter().filter(|r| r.algorithm == alg).collect();
            let trials = mine.len();
            let failures = mine.iter().filter(|r| !r.success).count();
            let mut errors: Vec<f64> = mine.iter().map(|r| r.terminal_error).collect();
            errors.sort_by(f64::total_cmp);
            AlgorithmSummary {
                algorithm: alg,
                trials,
                failures,
                success_rate: 1.0 - failures as f64 / trials as f64,
                avg_iters: mean(mine.iter().filter(|r| r.success).map(|r| r.iterations as f64)),
                avg_time_s: mean(mine.iter().map(|r| r.wall_time_s)),
                q1: quantile(&errors, 0.25),
                q2: quantile(&errors, 0.5),
                q3: quantile(&errors, 0.75),
            }
        })
        .collect();
    SummaryReport { rows }
}

#[derive(Clone, Debug)]
pub struct SuiteOutput {
    /// Ordered by algorithm (config order), then map, then start.
    pub records: Vec<TrialRecord>,
    pub summary: SummaryReport,
}

impl SuiteOutput {
    pub fn results(&self) -> Vec<TrialResult> {
        self.records.iter().map(|r| r.result.clone()).collect()
    }
}

/// Validates the config, resolves maps and runs every
/// `(algorithm, map, start)` trial.
pub fn run_suite(config: &ExperimentConfig) -> Result<SuiteOutput> {
    for w in config.validate()? {
        warn!("{w}");
    }
    let maps = resolve_maps(&config.maps)?;
    let model = config.model.model();
    let input_constraint = config.input_constraint()?;
    let dt = StepSize::new(config.dt)?;

    let mut jobs = Vec::new();
    for &alg in &config.algorithms {
        for (map_id, grid) in &maps {
            for start_id in 0..config.starts.len() {
                jobs.push((alg, map_id.clone(), grid.clone(), start_id));
            }
        }
    }
    info!("running {} trials", jobs.len());

    let records = jobs
        .into_par_iter()
        .map(|(alg, map_id, grid, start_id)| -> Result<TrialRecord> {
            let ctx = PlanningContext {
                model,
                input_constraint: input_constraint.clone(),
                state_constraint: config.state_constraint(grid),
                dt,
            };
            let mut planner = config.planner(alg, &ctx);
            let settings = DriveSettings {
                max_iters: config.max_iters,
                tolerance: config.err,
                max_retries: config.max_retries,
                seed: trial_seed(config.seed, &map_id, start_id),
            };
            let out = closed_loop_drive(planner.as_mut(), &ctx, &config.starts[start_id], &config.goal, &settings)?;
            info!(
                "{alg} {map_id} start {start_id}: success={} iters={} err={:.3}",
                out.success, out.iterations, out.terminal_error
            );
            Ok(TrialRecord {
                result: TrialResult {
                    algorithm: alg,
                    map_id,
                    start_id,
                    success: out.success,
                    iterations: out.iterations,
                    max_iters: config.max_iters,
                    wall_time_s: out.wall_time_s,
                    terminal_error: out.terminal_error,
                    failure_reason: out.failure,
                },
                states: out.states,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records.iter().map(|r| r.result.clone()).collect::<Vec<_>>());
    Ok(SuiteOutput { records, summary })
}

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const SUMMARY_HEADER: &str = "algorithm,trials,failures,success_rate,avg_iters,avg_time_s,q1,q2,q3";

/// One JSON object per line, newline-terminated.
pub fn format_trials_jsonl(results: &[TrialResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_trials_jsonl(text: &str) -> Result<Vec<TrialResult>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn format_summary_csv(report: &SummaryReport) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.algorithm, r.trials, r.failures, r.success_rate, r.avg_iters, r.avg_time_s, r.q1, r.q2, r.q3
        );
    }
    out
}

/// Summary rows as JSON lines (NaN becomes `null`).
pub fn format_summary_jsonl(report: &SummaryReport) -> Result<String> {
    let mut out = String::new();
    for r in &report.rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// `step,<state labels>` header, then one row per executed state.
pub fn format_trajectory_csv(model: ModelKind, states: &StateTrajectory) -> String {
    let mut out = String::from("step");
    for label in model.state_labels() {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (t, x) in states.iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in x {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn trajectory_file_name(r: &TrialResult) -> String {
    format!("{}_{}_{}.csv", r.algorithm, r.map_id, r.start_id)
}

/// Writes `trials.jsonl`, `summary.csv` and, when `trajectories` is set,
/// one CSV per trial under `trajectories/`.
pub fn write_outputs(dir: &Path, model: ModelKind, output: &SuiteOutput, trajectories: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRIALS_FILE), format_trials_jsonl(&output.results())?)?;
    fs::write(dir.join(SUMMARY_FILE), format_summary_csv(&output.summary))?;
    if trajectories {
        let tdir = dir.join(TRAJECTORY_DIR);
        fs::create_dir_all(&tdir)?;
        for rec in &output.records {
            fs::write(
                tdir.join(trajectory_file_name(&rec.result)),
                format_trajectory_csv(model, &rec.states),
            )?;
        }
    }
    Ok(())
}

pub fn read_trials(dir: &Path) -> Result<Vec<TrialResult>> {
    parse_trials_jsonl(&fs::read_to_string(dir.join(TRIALS_FILE))?)
}
