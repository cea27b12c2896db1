//! Bayesian optimization of the demonstration NLL over the parameter box.
//!
//! A run evaluates `n_init` initial points, then for `budget` iterations fits
//! the GP surrogate to every evaluation so far, maximizes expected
//! improvement and evaluates the proposal exactly. The incumbent is the
//! lowest NLL seen.

mod acquisition;

pub use acquisition::{ei_from_moments, halton_points, pattern_search};

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::gp::{logspace, GpState, InputMap, Kernel, KernelKind, KernelSpec, DEFAULT_NOISE};
use crate::io::{fmt_f64, write_atomic};
use crate::mdp::{SoftViConfig, Trajectory};
use crate::numeric::quantile;
use crate::objective::NllObjective;
use crate::projection::{generate_basis, ProjectionBasis, RhoProjector};
use crate::reward::Bounds;

/// Proposals closer than this (max-norm) to an evaluated point are perturbed.
const DUPLICATE_TOL: f64 = 1e-9;
const DUPLICATE_NOISE: f64 = 1e-3;
const MAX_INIT_ATTEMPTS_PER_POINT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    Random,
    /// Uniform points whose NLL is at least the given quantile of a coarse
    /// grid pre-scan.
    AdversarialHighNll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub budget: usize,
    pub n_init: usize,
    pub kernel: KernelKind,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    /// Noise variances tried alongside the lengthscale grid at each refit;
    /// empty keeps `noise_variance` fixed.
    pub noise_grid: Vec<f64>,
    /// Re-select the lengthscale every this many BO iterations (0: never).
    pub refit_every: usize,
    pub candidate_count: usize,
    /// EI evaluations allowed in the pattern-search refinement.
    pub refine_evals: usize,
    pub init_strategy: InitStrategy,
    /// Grid points per free axis of the adversarial pre-scan.
    pub prescan_per_axis: usize,
    pub adversarial_quantile: f64,
    /// Expert trajectories in the ρ basis.
    pub basis_k: usize,
    /// Uniform rollouts per expert trajectory in the ρ basis.
    pub basis_m: usize,
    pub soft_vi: SoftViConfig,
    pub include_transition_terms: bool,
    /// Off by default: `wall_ms` is then written as 0 so traces are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            budget: 100,
            n_init: 5,
            kernel: KernelKind::RhoRbf,
            lengthscale: 1.0,
            signal_variance: 1.0,
            noise_variance: DEFAULT_NOISE,
            noise_grid: Vec::new(),
            refit_every: 0,
            candidate_count: 2048,
            refine_evals: 100,
            init_strategy: InitStrategy::AdversarialHighNll,
            prescan_per_axis: 3,
            adversarial_quantile: 2.0 / 3.0,
            basis_k: 10,
            basis_m: 5,
            soft_vi: SoftViConfig::default(),
            include_transition_terms: true,
            record_wall_time: false,
            seed: 0,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::Config("n_init must be at least 1".into()));
        }
        if self.candidate_count == 0 {
            return Err(Error::Config("candidate_count must be at least 1".into()));
        }
        if self.prescan_per_axis < 2 && self.init_strategy == InitStrategy::AdversarialHighNll {
            return Err(Error::Config("prescan_per_axis must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.adversarial_quantile) {
            return Err(Error::Config("adversarial_quantile must be in [0, 1]".into()));
        }
        KernelSpec::new(self.kernel, self.lengthscale, self.signal_variance)?;
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, self.lengthscale, self.signal_variance)
    }
}

/// Independent sub-seeds so that, for example, initial points do not depend
/// on which kernel is used.
pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_BASIS: u64 = 2;
const STREAM_PROPOSE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Bo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    /// 1-based evaluation index.
    pub iter: usize,
    pub phase: Phase,
    pub theta: Vec<f64>,
    pub nll: f64,
    pub wall_ms: f64,
    pub best_nll: f64,
    pub best_theta: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    records: Vec<BoRecord>,
}

impl BoTrace {
    pub fn records(&self) -> &[BoRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn best(&self) -> Option<&BoRecord> {
        self.records.last()
    }

    pub fn n_init(&self) -> usize {
        self.records.iter().filter(|r| r.phase == Phase::Init).count()
    }

    /// Appends an evaluation and updates the incumbent.
    pub fn push(&mut self, phase: Phase, theta: Vec<f64>, nll: f64, wall_ms: f64) {
        let (best_nll, best_theta) = match self.records.last() {
            Some(prev) if prev.best_nll <= nll => (prev.best_nll, prev.best_theta.clone()),
            _ => (nll, theta.clone()),
        };
        self.records.push(BoRecord {
            iter: self.records.len() + 1,
            phase,
            theta,
            nll,
            wall_ms,
            best_nll,
            best_theta,
        });
    }

    /// `iter,theta_0..theta_{d-1},nll,best_nll,wall_ms`
    pub fn to_csv(&self) -> String {
        let dim = self.records.first().map_or(0, |r| r.theta.len());
        let mut out = String::from("iter");
        for i in 0..dim {
            write!(out, ",theta_{i}").unwrap();
        }
        out.push_str(",nll,best_nll,wall_ms\n");
        for r in &self.records {
            write!(out, "{}", r.iter).unwrap();
            for t in &r.theta {
                write!(out, ",{}", fmt_f64(*t)).unwrap();
            }
            writeln!(out, ",{},{},{}", fmt_f64(r.nll), fmt_f64(r.best_nll), fmt_f64(r.wall_ms)).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Final summary written next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoSummary {
    pub best_theta: Vec<f64>,
    pub best_nll: f64,
    pub evaluations: usize,
    pub n_init: usize,
    pub budget: usize,
    pub kernel: KernelKind,
    pub final_lengthscale: f64,
}

/// A surrogate over θ: the kernel's input map plus a GP on mapped inputs.
#[derive(Debug, Clone)]
pub struct Surrogate {
    kernel: Kernel,
    noise: f64,
    thetas: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    values: Vec<f64>,
    gp: GpState,
}

impl Surrogate {
    pub fn new(kernel: Kernel, noise: f64) -> Result<Self> {
        let gp = GpState::empty(*kernel.spec(), noise)?;
        Ok(Self {
            kernel,
            noise,
            thetas: Vec::new(),
            features: Vec::new(),
            values: Vec::new(),
            gp,
        })
    }

    /// Adds an observation and refits.
    pub fn push(&mut self, theta: Vec<f64>, value: f64) -> Result<()> {
        self.features.push(self.kernel.features(&theta)?);
        self.thetas.push(theta);
        self.values.push(value);
        self.refit()
    }

    fn refit(&mut self) -> Result<()> {
        self.gp = GpState::fit_standardized(
            self.features.clone(),
            self.values.clone(),
            *self.kernel.spec(),
            self.noise,
        )?;
        Ok(())
    }

    /// Keeps the lengthscale in `grid` with the highest marginal likelihood.
    pub fn select_lengthscale(&mut self, grid: &[f64]) -> Result<()> {
        self.select_hyperparameters(grid, &[self.noise])
    }

    /// Keeps the (lengthscale, noise variance) pair with the highest
    /// marginal likelihood.
    pub fn select_hyperparameters(&mut self, lengthscales: &[f64], noises: &[f64]) -> Result<()> {
        if self.values.is_empty() {
            return Ok(());
        }
        self.gp = self.gp.select_hyperparameters(lengthscales, noises)?;
        self.noise = self.gp.noise();
        self.kernel = self.kernel.with_spec(*self.gp.kernel())?;
        Ok(())
    }

    pub fn posterior(&self, theta: &[f64]) -> Result<(f64, f64)> {
        self.gp.posterior(&self.kernel.features(theta)?)
    }

    pub fn expected_improvement(&self, theta: &[f64], f_best: f64) -> Result<f64> {
        let (mu, var) = self.posterior(theta)?;
        Ok(ei_from_moments(mu, var, f_best, self.gp.prior_variance()))
    }

    /// GP kernel row of θ against every observation.
    pub fn kernel_row(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.gp.kernel_row(&self.kernel.features(theta)?)
    }

    pub fn gp(&self) -> &GpState {
        &self.gp
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn f_best(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::min)
    }
}

/// Expected improvement of a fitted GP at an already-mapped input.
pub fn expected_improvement(gp: &GpState, query: &[f64], f_best: f64) -> Result<f64> {
    let (mu, var) = gp.posterior(query)?;
    Ok(ei_from_moments(mu, var, f_best, gp.prior_variance()))
}

fn unit_to_theta(bounds: &Bounds, free: &[usize], unit: &[f64]) -> Vec<f64> {
    let mut theta = bounds.lo().to_vec();
    for (k, &i) in free.iter().enumerate() {
        theta[i] = bounds.lo()[i] + unit[k] * bounds.width(i);
    }
    theta
}

/// Next point to evaluate: best EI over `candidate_count` randomized Halton
/// candidates, refined by pattern search.
///
/// When every candidate has zero EI the candidate with the largest posterior
/// variance is returned (lowest index on ties) without refinement. Proposals
/// that repeat an evaluated point are perturbed by `1e-3` of the box width.
pub fn propose_next<R: Rng + ?Sized>(
    surrogate: &Surrogate,
    bounds: &Bounds,
    config: &BoConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let free = bounds.free_dims();
    if free.is_empty() {
        return Ok(bounds.lo().to_vec());
    }
    let units = halton_points(config.candidate_count, free.len(), rng);
    let Some(f_best) = surrogate.f_best() else {
        return Ok(unit_to_theta(bounds, &free, &units[0]));
    };
    let prior_var = surrogate.gp().prior_variance();
    let scores = units
        .par_iter()
        .map(|u| {
            let (mu, var) = surrogate.posterior(&unit_to_theta(bounds, &free, u))?;
            Ok((ei_from_moments(mu, var, f_best, prior_var), var))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.0 > scores[best].0 {
            best = i;
        }
    }
    let theta = if scores[best].0 > 0.0 {
        let step = 0.5 * (config.candidate_count as f64).powf(-1.0 / free.len() as f64);
        let (unit, _) = pattern_search(
            |u| {
                surrogate
                    .expected_improvement(&unit_to_theta(bounds, &free, u), f_best)
                    .unwrap_or(f64::NEG_INFINITY)
            },
            units[best].clone(),
            scores[best].0,
            step,
            config.refine_evals,
        );
        unit_to_theta(bounds, &free, &unit)
    } else {
        // variances at roundoff level count as zero so ties go to index 0
        let floor = 1e-12 * prior_var;
        let var = |i: usize| if scores[i].1 <= floor { 0.0 } else { scores[i].1 };
        let mut widest = 0;
        for i in 0..scores.len() {
            if var(i) > var(widest) {
                widest = i;
            }
        }
        unit_to_theta(bounds, &free, &units[widest])
    };
    Ok(perturb_duplicate(theta, surrogate.thetas(), bounds, rng))
}

fn perturb_duplicate<R: Rng + ?Sized>(
    mut theta: Vec<f64>,
    seen: &[Vec<f64>],
    bounds: &Bounds,
    rng: &mut R,
) -> Vec<f64> {
    let is_dup = |t: &[f64]| {
        seen.iter()
            .any(|s| s.iter().zip(t).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
    };
    for _ in 0..16 {
        if !is_dup(&theta) {
            break;
        }
        for i in bounds.free_dims() {
            let noise = rng.random_range(-1.0..=1.0) * DUPLICATE_NOISE * bounds.width(i);
            theta[i] = bounds.reflect(i, theta[i] + noise);
        }
    }
    theta
}

/// Initial design. Points with a known value were already evaluated while
/// screening and are not evaluated again.
#[derive(Debug, Clone, PartialEq)]
pub struct InitPlan {
    pub points: Vec<(Vec<f64>, Option<f64>)>,
    /// Pre-scan grid evaluations (adversarial strategy only).
    pub prescan: Vec<(Vec<f64>, f64)>,
    pub threshold: Option<f64>,
}

fn uniform_point<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    (0..bounds.dim())
        .map(|i| {
            if bounds.width(i) > 0.0 {
                rng.random_range(bounds.lo()[i]..=bounds.hi()[i])
            } else {
                bounds.lo()[i]
            }
        })
        .collect()
}

/// Full grid with `per_axis` points on every free coordinate, endpoints
/// included.
pub fn grid_points(bounds: &Bounds, per_axis: usize) -> Vec<Vec<f64>> {
    let free = bounds.free_dims();
    let mut out = vec![bounds.lo().to_vec()];
    for &i in &free {
        let mut next = Vec::with_capacity(out.len() * per_axis);
        for p in &out {
            for k in 0..per_axis {
                let mut q = p.clone();
                let frac = if per_axis > 1 { k as f64 / (per_axis - 1) as f64 } else { 0.5 };
                q[i] = bounds.lo()[i] + frac * bounds.width(i);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Initial points for a run.
///
/// `Random` draws uniformly from the box. `AdversarialHighNll` evaluates the
/// objective on a coarse grid, then rejection-samples uniform points whose
/// value is at least the configured quantile of the grid values. If
/// sampling keeps failing, the highest grid points fill the remaining slots.
pub fn init_points<R: Rng + ?Sized>(
    objective: &mut dyn FnMut(&[f64]) -> Result<f64>,
    bounds: &Bounds,
    config: &BoConfig,
    rng: &mut R,
) -> Result<InitPlan> {
    match config.init_strategy {
        InitStrategy::Random => Ok(InitPlan {
            points: (0..config.n_init).map(|_| (uniform_point(bounds, rng), None)).collect(),
            prescan: Vec::new(),
            threshold: None,
        }),
        InitStrategy::AdversarialHighNll => {
            let mut prescan = Vec::new();
            for p in grid_points(bounds, config.prescan_per_axis) {
                let v = objective(&p)?;
                prescan.push((p, v));
            }
            let values: Vec<f64> = prescan.iter().map(|p| p.1).collect();
            let threshold = quantile(&values, config.adversarial_quantile);
            let mut points = Vec::with_capacity(config.n_init);
            let mut attempts = 0;
            while points.len() < config.n_init
                && attempts < MAX_INIT_ATTEMPTS_PER_POINT * config.n_init
            {
                attempts += 1;
                let p = uniform_point(bounds, rng);
                let v = objective(&p)?;
                if v >= threshold {
                    points.push((p, Some(v)));
                }
            }
            if points.len() < config.n_init {
                let mut ranked = prescan.clone();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
                for (p, v) in ranked.into_iter().cycle().take(config.n_init - points.len()) {
                    points.push((p, Some(v)));
                }
            }
            Ok(InitPlan {
                points,
                prescan,
                threshold: Some(threshold),
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub trace: BoTrace,
    pub surrogate: Surrogate,
    pub best_theta: Vec<f64>,
    pub best_nll: f64,
    pub basis: Option<ProjectionBasis>,
}

impl BoOutcome {
    pub fn gp(&self) -> &GpState {
        self.surrogate.gp()
    }

    pub fn summary(&self, config: &BoConfig) -> BoSummary {
        BoSummary {
            best_theta: self.best_theta.clone(),
            best_nll: self.best_nll,
            evaluations: self.trace.len(),
            n_init: self.trace.n_init(),
            budget: config.budget,
            kernel: config.kernel,
            final_lengthscale: self.surrogate.gp().kernel().lengthscale,
        }
    }
}

/// A failed run: the error plus everything evaluated before it.
#[derive(Debug)]
pub struct BoAbort {
    pub trace: BoTrace,
    pub error: Error,
}

impl From<Box<BoAbort>> for Error {
    fn from(abort: Box<BoAbort>) -> Self {
        Error::Aborted {
            completed: abort.trace.len(),
            source: Box::new(abort.error),
        }
    }
}

/// BO over an arbitrary objective, starting from `init`.
///
/// Performs exactly `init.points.len() + config.budget` evaluations unless
/// an evaluation fails, in which case the partial trace comes back with the
/// error.
pub fn run_bo(
    objective: &mut dyn FnMut(&[f64]) -> Result<f64>,
    bounds: &Bounds,
    kernel: Kernel,
    config: &BoConfig,
    init: InitPlan,
) -> std::result::Result<BoOutcome, Box<BoAbort>> {
    let mut trace = BoTrace::default();
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(Box::new(BoAbort { trace, error })),
            }
        };
    }
    attempt!(config.validate());
    if init.points.is_empty() {
        attempt!(Err(Error::Config("no initial points".into())));
    }
    let mut surrogate = attempt!(Surrogate::new(kernel, config.noise_variance));
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_PROPOSE));
    let grid = logspace(-2.0, 1.0, 16);

    let timed = |objective: &mut dyn FnMut(&[f64]) -> Result<f64>, theta: &[f64]| {
        let start = Instant::now();
        let v = objective(theta)?;
        let ms = if config.record_wall_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        Ok::<_, Error>((v, ms))
    };

    for (theta, known) in init.points {
        let (value, ms) = match known {
            Some(v) => (v, 0.0),
            None => attempt!(timed(objective, &theta)),
        };
        trace.push(Phase::Init, theta.clone(), value, ms);
        attempt!(surrogate.push(theta, value));
    }

    for t in 0..config.budget {
        if config.refit_every > 0 && t % config.refit_every == 0 {
            attempt!(if config.noise_grid.is_empty() {
                surrogate.select_lengthscale(&grid)
            } else {
                surrogate.select_hyperparameters(&grid, &config.noise_grid)
            });
        }
        let theta = attempt!(propose_next(&surrogate, bounds, config, &mut rng));
        let (value, ms) = attempt!(timed(objective, &theta));
        trace.push(Phase::Bo, theta.clone(), value, ms);
        attempt!(surrogate.push(theta, value));
    }

    let best = trace.best().expect("at least one evaluation").clone();
    Ok(BoOutcome {
        trace,
        surrogate,
        best_theta: best.best_theta,
        best_nll: best.best_nll,
        basis: None,
    })
}

/// Builds the kernel for `config` on `env`, generating the ρ basis from
/// `demos` when the kernel needs one.
pub fn build_kernel(
    env: &EnvironmentSpec,
    demos: &[Trajectory],
    config: &BoConfig,
) -> Result<(Kernel, Option<ProjectionBasis>)> {
    let spec = config.kernel_spec()?;
    match config.kernel {
        KernelKind::Rbf | KernelKind::Matern => Ok((
            Kernel::new(spec, InputMap::Whiten(env.theta_bounds().clone()))?,
            None,
        )),
        KernelKind::RhoRbf => {
            let basis = generate_basis(
                demos,
                env.mdp(),
                config.basis_k,
                config.basis_m,
                sub_seed(config.seed, STREAM_BASIS),
            )?;
            let projector = RhoProjector::new(&basis, env);
            Ok((Kernel::new(spec, InputMap::Rho(Arc::new(projector)))?, Some(basis)))
        }
    }
}

/// BO-IRL on an environment: basis generation (ρ-RBF only), initial design,
/// then the BO loop on the exact NLL.
pub fn run_boirl(
    env: &EnvironmentSpec,
    demos: &[Trajectory],
    config: &BoConfig,
) -> std::result::Result<BoOutcome, Box<BoAbort>> {
    let setup = || -> Result<_> {
        config.validate()?;
        let objective = NllObjective::new(env, demos, config.soft_vi, config.include_transition_terms)?;
        let (kernel, basis) = build_kernel(env, demos, config)?;
        Ok((objective, kernel, basis))
    };
    let (objective, kernel, basis) = setup().map_err(|error| {
        Box::new(BoAbort {
            trace: BoTrace::default(),
            error,
        })
    })?;
    let mut f = |theta: &[f64]| objective.evaluate(theta);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, STREAM_INIT));
    let init = init_points(&mut f, env.theta_bounds(), config, &mut rng).map_err(|error| {
        Box::new(BoAbort {
            trace: BoTrace::default(),
            error,
        })
    })?;
    let mut outcome = run_bo(&mut f, env.theta_bounds(), kernel, config, init)?;
    outcome.basis = basis;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quadratic_config(budget: usize) -> BoConfig {
        BoConfig {
            budget,
            n_init: 3,
            kernel: KernelKind::Rbf,
            init_strategy: InitStrategy::Random,
            candidate_count: 256,
            refit_every: 5,
            record_wall_time: false,
            seed: 11,
            ..Default::default()
        }
    }

    fn run_quadratic(budget: usize) -> BoOutcome {
        let bounds = Bounds::from_pairs(&[(-4.0, 4.0)]).unwrap();
        let config = quadratic_config(budget);
        let kernel = Kernel::new(config.kernel_spec().unwrap(), InputMap::Whiten(bounds.clone())).unwrap();
        let mut f = |t: &[f64]| Ok((t[0] - 1.0).powi(2));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init = init_points(&mut f, &bounds, &config, &mut rng).unwrap();
        run_bo(&mut f, &bounds, kernel, &config, init).unwrap()
    }

    #[test]
    fn quadratic_minimum_is_found() {
        let out = run_quadratic(25);
        assert_eq!(out.trace.len(), 28);
        assert!((out.best_theta[0] - 1.0).abs() < 0.05, "{:?}", out.best_theta);
    }

    #[test]
    fn zero_budget_returns_best_initial_point() {
        let out = run_quadratic(0);
        assert_eq!(out.trace.len(), 3);
        let best = out
            .trace
            .records()
            .iter()
            .map(|r| r.nll)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_nll, best);
    }

    #[test]
    fn best_so_far_is_monotone_and_runs_reproduce() {
        let a = run_quadratic(10);
        for w in a.trace.records().windows(2) {
            assert!(w[1].best_nll <= w[0].best_nll);
        }
        assert_eq!(a.trace.to_csv(), run_quadratic(10).trace.to_csv());
    }

    #[test]
    fn csv_header_and_rows() {
        let out = run_quadratic(2);
        let csv = out.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "iter,theta_0,nll,best_nll,wall_ms");
        assert_eq!(lines.count(), 5);
    }

    #[test]
    fn collapsed_bounds_repeat_the_point() {
        let bounds = Bounds::from_pairs(&[(2.0, 2.0), (-1.0, -1.0)]).unwrap();
        let mut f = |t: &[f64]| Ok(t[0] + t[1]);
        for strategy in [InitStrategy::Random, InitStrategy::AdversarialHighNll] {
            let config = BoConfig {
                n_init: 4,
                init_strategy: strategy,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let plan = init_points(&mut f, &bounds, &config, &mut rng).unwrap();
            assert_eq!(plan.points.len(), 4);
            assert!(plan.points.iter().all(|p| p.0 == vec![2.0, -1.0]));
        }
    }

    #[test]
    fn random_init_is_deterministic_and_inside() {
        let bounds = Bounds::from_pairs(&[(-2.0, 2.0), (0.0, 10.0)]).unwrap();
        let config = BoConfig {
            n_init: 1,
            init_strategy: InitStrategy::Random,
            ..Default::default()
        };
        let mut f = |_: &[f64]| Ok(0.0);
        let a = init_points(&mut f, &bounds, &config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = init_points(&mut f, &bounds, &config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(bounds.contains(&a.points[0].0));
    }

    #[test]
    fn adversarial_points_clear_the_threshold() {
        let bounds = Bounds::from_pairs(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let config = BoConfig {
            n_init: 6,
            init_strategy: InitStrategy::AdversarialHighNll,
            ..Default::default()
        };
        let mut f = |t: &[f64]| Ok(t[0] * t[0] + 0.5 * t[1]);
        let plan = init_points(&mut f, &bounds, &config, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(plan.prescan.len(), 9);
        let values: Vec<f64> = plan.prescan.iter().map(|p| p.1).collect();
        let threshold = quantile(&values, 2.0 / 3.0);
        assert_eq!(plan.threshold, Some(threshold));
        for (p, v) in &plan.points {
            assert_eq!(*v, Some(f(p).unwrap()));
            assert!(v.unwrap() >= threshold);
        }
    }

    #[test]
    fn zero_variance_everywhere_falls_back_to_first_candidate() {
        // a single observation with a huge lengthscale leaves no variance
        let bounds = Bounds::from_pairs(&[(0.0, 1.0)]).unwrap();
        let spec = KernelSpec::new(KernelKind::Rbf, 1e6, 1.0).unwrap();
        let mut s = Surrogate::new(Kernel::new(spec, InputMap::Identity).unwrap(), 0.0).unwrap();
        s.push(vec![0.5], 1.0).unwrap();
        let config = BoConfig {
            candidate_count: 64,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let got = propose_next(&s, &bounds, &config, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let first = halton_points(64, 1, &mut rng)[0][0];
        assert_relative_eq!(got[0], first, epsilon = 1e-15);
    }

    #[test]
    fn proposal_matches_dense_grid_argmax() {
        let bounds = Bounds::from_pairs(&[(0.0, 1.0)]).unwrap();
        let spec = KernelSpec::new(KernelKind::Rbf, 0.15, 1.0).unwrap();
        let mut s = Surrogate::new(Kernel::new(spec, InputMap::Identity).unwrap(), 1e-6).unwrap();
        s.push(vec![0.2], 1.0).unwrap();
        s.push(vec![0.6], 0.3).unwrap();
        let f_best = 0.3;
        let n = 100_000;
        let (mut arg, mut best) = (0.0, -1.0);
        for i in 0..n {
            let x = i as f64 / (n - 1) as f64;
            let ei = s.expected_improvement(&[x], f_best).unwrap();
            if ei > best {
                best = ei;
                arg = x;
            }
        }
        let config = BoConfig {
            candidate_count: 2048,
            ..Default::default()
        };
        let got = propose_next(&s, &bounds, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((got[0] - arg).abs() <= 1.0 / (n - 1) as f64 + 1e-9, "{} vs {arg}", got[0]);
        let again = propose_next(&s, &bounds, &config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(got, again);
    }

    #[test]
    fn duplicate_proposal_is_moved() {
        let bounds = Bounds::from_pairs(&[(0.0, 10.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let moved = perturb_duplicate(vec![5.0], &[vec![5.0]], &bounds, &mut rng);
        assert!(moved[0] != 5.0 && (moved[0] - 5.0).abs() <= 0.01);
    }

    #[test]
    fn failing_objective_returns_partial_trace() {
        let bounds = Bounds::from_pairs(&[(-1.0, 1.0)]).unwrap();
        let config = quadratic_config(5);
        let kernel = Kernel::new(config.kernel_spec().unwrap(), InputMap::Whiten(bounds.clone())).unwrap();
        let mut calls = 0;
        let mut f = |t: &[f64]| {
            calls += 1;
            if calls > 4 {
                Err(Error::NumericBlowup { iteration: 1 })
            } else {
                Ok(t[0] * t[0])
            }
        };
        let init = InitPlan {
            points: vec![(vec![0.5], None), (vec![-0.5], None)],
            prescan: Vec::new(),
            threshold: None,
        };
        let abort = run_bo(&mut f, &bounds, kernel, &config, init).unwrap_err();
        assert_eq!(abort.trace.len(), 4);
        assert!(matches!(Error::from(abort), Error::Aborted { completed: 4, .. }));
    }

    #[test]
    fn grid_points_cover_corners() {
        let bounds = Bounds::from_pairs(&[(-1.0, 1.0), (3.0, 3.0), (0.0, 2.0)]).unwrap();
        let g = grid_points(&bounds, 2);
        assert_eq!(g.len(), 4);
        assert!(g.contains(&vec![-1.0, 3.0, 0.0]));
        assert!(g.contains(&vec![1.0, 3.0, 2.0]));
    }
}
