//! Metrics (ESOR, iterations to expert ESOR), NLL landscape scans, ρ dumps
//! and the config-driven experiment runner.

mod experiment;

pub use experiment::{
    load_config, run_experiment, AlgorithmKind, DemoConfig, EnvConfig, EnvFile, ExperimentConfig,
    MetricsConfig, MetricsReport, SeedResult,
};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bo::BoTrace;
use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::mdp::{
    rollout, soft_value_iteration, traj_reward, RewardTable, RolloutPolicy, SoftViConfig,
};
use crate::projection::RhoProjector;
use crate::reward::{check_family, eval_reward, policy_reward_raw, Bounds, RewardParams};

/// Mean discounted ground-truth return of `n_rollouts` trajectories of
/// length `horizon` under the soft policy of `theta`, with start states from
/// the environment's start distribution.
pub fn esor(
    theta: &RewardParams,
    env: &EnvironmentSpec,
    ground_truth: &RewardParams,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
    vi: &SoftViConfig,
) -> Result<f64> {
    let truth = eval_reward(ground_truth, env)?;
    check_family(theta, env)?;
    let learned = policy_reward_raw(theta.theta(), env)?;
    esor_with_tables(&learned, &truth, env, n_rollouts, horizon, seed, vi)
}

fn esor_with_tables(
    learned: &RewardTable,
    truth: &RewardTable,
    env: &EnvironmentSpec,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
    vi: &SoftViConfig,
) -> Result<f64> {
    if n_rollouts == 0 || horizon == 0 {
        return Err(Error::Config("ESOR needs at least one rollout of length >= 1".into()));
    }
    let policy = soft_value_iteration(env.mdp(), learned, vi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = env.mdp().discount();
    let mut total = 0.0;
    for _ in 0..n_rollouts {
        let start = env.mdp().sample_start(&mut rng);
        let t = rollout(env.mdp(), RolloutPolicy::Soft(&policy), start, horizon, &mut rng)?;
        total += traj_reward(&t, truth, gamma);
    }
    Ok(total / n_rollouts as f64)
}

/// Success threshold: within `tolerance` of the expert's ESOR, measured
/// relative to its magnitude so negative-reward environments work too.
pub fn esor_threshold(expert_esor: f64, tolerance: f64) -> f64 {
    expert_esor - tolerance * expert_esor.abs()
}

/// ESOR under fixed rollout settings, cached per θ.
///
/// Every θ is scored with the same seed, so comparisons between θ and the
/// expert use common random numbers.
#[derive(Debug)]
pub struct EsorEvaluator<'a> {
    env: &'a EnvironmentSpec,
    truth: RewardTable,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
    vi: SoftViConfig,
    cache: Mutex<HashMap<Vec<u64>, f64>>,
}

impl<'a> EsorEvaluator<'a> {
    pub fn new(
        env: &'a EnvironmentSpec,
        n_rollouts: usize,
        horizon: usize,
        seed: u64,
        vi: SoftViConfig,
    ) -> Result<Self> {
        let gt = env.ground_truth().ok_or(Error::MissingGroundTruth)?;
        Ok(Self {
            env,
            truth: eval_reward(gt, env)?,
            n_rollouts,
            horizon,
            seed,
            vi,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn esor(&self, theta: &[f64]) -> Result<f64> {
        let key: Vec<u64> = theta.iter().map(|t| t.to_bits()).collect();
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let learned = policy_reward_raw(theta, self.env)?;
        let v = esor_with_tables(&learned, &self.truth, self.env, self.n_rollouts, self.horizon, self.seed, &self.vi)?;
        self.cache.lock().expect("cache lock").insert(key, v);
        Ok(v)
    }

    pub fn expert(&self) -> Result<f64> {
        let gt = self.env.ground_truth().ok_or(Error::MissingGroundTruth)?;
        self.esor(gt.theta())
    }
}

/// First 1-based evaluation index at which the best-so-far θ reaches the
/// ESOR threshold.
pub fn iterations_to_expert(
    trace: &BoTrace,
    evaluator: &EsorEvaluator<'_>,
    expert_esor: f64,
    tolerance: f64,
) -> Result<Option<usize>> {
    let threshold = esor_threshold(expert_esor, tolerance);
    let mut last: Option<&[f64]> = None;
    for r in trace.records() {
        if last == Some(r.best_theta.as_slice()) {
            continue;
        }
        last = Some(&r.best_theta);
        if evaluator.esor(&r.best_theta)? >= threshold {
            return Ok(Some(r.iter));
        }
    }
    Ok(None)
}

/// A 2-D slice through the parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScan {
    pub axes: (usize, usize),
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
    /// `nll[r][c]` at `θ[axes.0] = rows[r]`, `θ[axes.1] = cols[c]`.
    pub nll: Vec<Vec<f64>>,
    pub gp_mean: Option<Vec<Vec<f64>>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

fn slice_points(
    bounds: &Bounds,
    axes: (usize, usize),
    fixed: &[f64],
    resolution: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>)> {
    if resolution < 2 {
        return Err(Error::Config("scan resolution must be at least 2".into()));
    }
    if fixed.len() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.dim(),
            got: fixed.len(),
        });
    }
    let (a, b) = axes;
    if a == b || a >= bounds.dim() || b >= bounds.dim() {
        return Err(Error::Config(format!("bad scan axes ({a}, {b})")));
    }
    let rows = linspace(bounds.lo()[a], bounds.hi()[a], resolution);
    let cols = linspace(bounds.lo()[b], bounds.hi()[b], resolution);
    let mut points = Vec::with_capacity(resolution * resolution);
    for &r in &rows {
        for &c in &cols {
            let mut t = fixed.to_vec();
            t[a] = r;
            t[b] = c;
            points.push(t);
        }
    }
    Ok((rows, cols, points))
}

/// Evaluates `objective` on a `resolution × resolution` grid over two
/// coordinates (bound to bound), holding the others at `fixed`. `gp_mean`
/// (typically a GP posterior mean) is evaluated on the same grid when given.
pub fn grid_scan(
    objective: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    bounds: &Bounds,
    axes: (usize, usize),
    fixed: &[f64],
    resolution: usize,
    gp_mean: Option<&(dyn Fn(&[f64]) -> Result<f64> + Sync)>,
) -> Result<GridScan> {
    let (rows, cols, points) = slice_points(bounds, axes, fixed, resolution)?;
    let values = points.par_iter().map(|t| objective(t)).collect::<Result<Vec<f64>>>()?;
    let gp_mean = gp_mean
        .map(|m| points.par_iter().map(|t| m(t)).collect::<Result<Vec<f64>>>())
        .transpose()?;
    let to_matrix = |v: Vec<f64>| v.chunks(resolution).map(<[f64]>::to_vec).collect();
    Ok(GridScan {
        axes,
        rows,
        cols,
        nll: to_matrix(values),
        gp_mean: gp_mean.map(to_matrix),
    })
}

impl GridScan {
    fn matrix_csv(&self, m: &[Vec<f64>]) -> String {
        let mut out = format!("theta_{}\\theta_{}", self.axes.0, self.axes.1);
        for c in &self.cols {
            write!(out, ",{}", fmt_f64(*c)).unwrap();
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(m) {
            write!(out, "{}", fmt_f64(*r)).unwrap();
            for v in row {
                write!(out, ",{}", fmt_f64(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Matrix CSV: the header holds the column-axis values, each row starts
    /// with its row-axis value.
    pub fn nll_csv(&self) -> String {
        self.matrix_csv(&self.nll)
    }

    pub fn gp_mean_csv(&self) -> Option<String> {
        self.gp_mean.as_ref().map(|m| self.matrix_csv(m))
    }

    pub fn flat_nll(&self) -> Vec<f64> {
        self.nll.iter().flatten().copied().collect()
    }

    /// Cell with the lowest NLL as `(row, col)`.
    pub fn argmin(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for (r, row) in self.nll.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if *v < self.nll[best.0][best.1] {
                    best = (r, c);
                }
            }
        }
        best
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.nll_csv().as_bytes())
    }
}

/// ρ-vectors on a 2-D slice, one row per grid point:
/// `theta_0..theta_{d-1},rho_0..rho_{K-1}`.
pub fn dump_rho(
    projector: &RhoProjector,
    bounds: &Bounds,
    axes: (usize, usize),
    fixed: &[f64],
    resolution: usize,
) -> Result<String> {
    let (_, _, points) = slice_points(bounds, axes, fixed, resolution)?;
    let rhos = points
        .par_iter()
        .map(|t| projector.project(t))
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::new();
    let header: Vec<String> = (0..bounds.dim())
        .map(|i| format!("theta_{i}"))
        .chain((0..projector.k()).map(|k| format!("rho_{k}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (t, rho) in points.iter().zip(&rhos) {
        let cells: Vec<String> = t.iter().chain(rho.values()).map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
