//! Config-driven experiment runner.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{esor_threshold, iterations_to_expert, EsorEvaluator};
use crate::baselines::{run_birl, BirlChain, BirlConfig};
use crate::bo::{run_boirl, BoConfig, BoTrace};
use crate::envs::{build_gridworld, build_roadnet, import_roadnet, EnvKind, EnvironmentSpec, GridworldLayout};
use crate::error::{Error, Result};
use crate::gp::KernelKind;
use crate::io::{fmt_f64, read_trajectories, write_atomic, write_trajectories};
use crate::mdp::{SoftViConfig, Trajectory};
use crate::objective::generate_demos;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// 0.9 for the gridworld and 0.99 for road networks when unset.
    pub discount: Option<f64>,
    /// Gridworld layout JSON; a seeded random layout is used otherwise.
    pub layout: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    pub max_coins: u32,
    pub layout_seed: u64,
    pub n_links: usize,
    pub graph_seed: u64,
    /// Road network edge-list CSV; the generator is used otherwise.
    pub edge_list: Option<PathBuf>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Gridworld,
            discount: None,
            layout: None,
            width: 6,
            height: 6,
            max_coins: 8,
            layout_seed: 0,
            n_links: 60,
            graph_seed: 0,
            edge_list: None,
        }
    }
}

impl EnvConfig {
    pub fn discount(&self) -> f64 {
        self.discount.unwrap_or(match self.kind {
            EnvKind::Gridworld => 0.9,
            EnvKind::Roadnet => 0.99,
        })
    }

    pub fn build(&self) -> Result<EnvironmentSpec> {
        match self.kind {
            EnvKind::Gridworld => {
                let layout = match &self.layout {
                    Some(path) => GridworldLayout::load(path)?,
                    None => GridworldLayout::random(self.width, self.height, self.max_coins, self.layout_seed),
                };
                build_gridworld(&layout, self.discount())
            }
            EnvKind::Roadnet => match &self.edge_list {
                Some(path) => import_roadnet(path, self.discount()),
                None => build_roadnet(self.n_links, self.graph_seed, self.discount()),
            },
        }
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.layout, &mut self.edge_list].into_iter().flatten() {
            *p = base.join(&*p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Defaults to 50.
    pub n: Option<usize>,
    /// Defaults to 15 on the gridworld and 20 on road networks.
    pub length: Option<usize>,
    pub seed: u64,
    /// JSONL trajectories; demos are generated from the ground truth
    /// otherwise.
    pub file: Option<PathBuf>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            n: None,
            length: None,
            seed: 0,
            file: None,
        }
    }
}

impl DemoConfig {
    pub fn length(&self, kind: EnvKind) -> usize {
        self.length.unwrap_or(match kind {
            EnvKind::Gridworld => 15,
            EnvKind::Roadnet => 20,
        })
    }

    pub fn load(&self, env: &EnvironmentSpec, vi: &SoftViConfig) -> Result<Vec<Trajectory>> {
        let demos = match &self.file {
            Some(path) => read_trajectories(path)?,
            None => {
                let gt = env.ground_truth().ok_or(Error::MissingGroundTruth)?;
                generate_demos(env, gt.theta(), self.n.unwrap_or(50), self.length(env.kind()), self.seed, vi)?
            }
        };
        for d in &demos {
            d.validate(env.mdp())?;
        }
        Ok(demos)
    }
}

/// The environment and demonstration part of a config. The scan and
/// ρ-dump commands read this from any experiment config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvFile {
    pub env: EnvConfig,
    pub demos: DemoConfig,
    pub soft_vi: SoftViConfig,
}

impl EnvFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file: Self = parse_by_extension(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.env.resolve(base);
        if let Some(f) = &mut file.demos.file {
            *f = base.join(&*f);
        }
        Ok(file)
    }

    pub fn build(&self) -> Result<(EnvironmentSpec, Vec<Trajectory>)> {
        let env = self.env.build()?;
        let demos = self.demos.load(&env, &self.soft_vi)?;
        Ok((env, demos))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    BoirlRhorbf,
    BoirlRbf,
    BoirlMatern,
    Birl,
}

impl AlgorithmKind {
    pub fn kernel(self) -> Option<KernelKind> {
        match self {
            Self::BoirlRhorbf => Some(KernelKind::RhoRbf),
            Self::BoirlRbf => Some(KernelKind::Rbf),
            Self::BoirlMatern => Some(KernelKind::Matern),
            Self::Birl => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BoirlRhorbf => "boirl-rhorbf",
            Self::BoirlRbf => "boirl-rbf",
            Self::BoirlMatern => "boirl-matern",
            Self::Birl => "birl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Skip ESOR and success metrics entirely.
    pub compute_esor: bool,
    pub tolerance: f64,
    /// Rollouts used for every ESOR estimate (expert and learned).
    pub rollouts: usize,
    /// Defaults to the demonstration length.
    pub horizon: Option<usize>,
    pub esor_seed: u64,
    pub write_gp: bool,
    pub write_basis: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            compute_esor: true,
            tolerance: 0.02,
            rollouts: 2000,
            horizon: None,
            esor_seed: 0,
            write_gp: true,
            write_basis: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub demos: DemoConfig,
    pub soft_vi: SoftViConfig,
    pub algorithm: AlgorithmKind,
    pub seeds: Vec<u64>,
    /// BO settings. `kernel`, `seed` and `soft_vi` are overridden by
    /// `algorithm`, the seed list and the top-level `soft_vi`.
    pub bo: BoConfig,
    /// BIRL settings. `seed` and `soft_vi` are overridden as for `bo`.
    pub birl: BirlConfig,
    /// When set, BIRL's chain length is this multiple of the BO evaluation
    /// count `bo.n_init + bo.budget`.
    pub birl_budget_multiplier: Option<usize>,
    pub metrics: MetricsConfig,
    pub parallel_seeds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            demos: DemoConfig::default(),
            soft_vi: SoftViConfig::default(),
            algorithm: AlgorithmKind::BoirlRhorbf,
            seeds: vec![0],
            bo: BoConfig::default(),
            birl: BirlConfig::default(),
            birl_budget_multiplier: None,
            metrics: MetricsConfig::default(),
            parallel_seeds: true,
        }
    }
}

fn parse_by_extension<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

/// Reads a TOML (or `.json`) experiment config. Relative file paths inside
/// it are resolved against the config's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let mut config: ExperimentConfig = parse_by_extension(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.env.resolve(base);
    if let Some(f) = &mut config.demos.file {
        *f = base.join(&*f);
    }
    Ok(config)
}

impl ExperimentConfig {
    pub fn env_file(&self) -> EnvFile {
        EnvFile {
            env: self.env.clone(),
            demos: self.demos.clone(),
            soft_vi: self.soft_vi,
        }
    }

    pub fn bo_config(&self, seed: u64) -> BoConfig {
        let mut bo = self.bo.clone();
        bo.seed = seed;
        bo.soft_vi = self.soft_vi;
        if let Some(kernel) = self.algorithm.kernel() {
            bo.kernel = kernel;
        }
        bo
    }

    pub fn birl_config(&self, seed: u64) -> BirlConfig {
        let mut birl = self.birl.clone();
        birl.seed = seed;
        birl.soft_vi = self.soft_vi;
        if let Some(m) = self.birl_budget_multiplier {
            birl.n_samples = m * (self.bo.n_init + self.bo.budget);
        }
        birl
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.metrics.tolerance >= 0.0 && self.metrics.tolerance.is_finite()) {
            return Err(Error::Config("metrics.tolerance must be non-negative".into()));
        }
        if self.metrics.compute_esor && self.metrics.rollouts == 0 {
            return Err(Error::Config("metrics.rollouts must be positive".into()));
        }
        match self.algorithm {
            AlgorithmKind::Birl => self.birl_config(0).validate(),
            _ => self.bo_config(0).validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub success: bool,
    /// 1-based evaluation index, initialization included.
    pub iterations: Option<usize>,
    /// Evaluations after initialization (0 when an initial point already
    /// reaches the threshold).
    pub bo_iterations: Option<usize>,
    pub evaluations: usize,
    pub best_nll: Option<f64>,
    pub best_theta: Option<Vec<f64>>,
    pub best_esor: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub algorithm: AlgorithmKind,
    pub env: EnvKind,
    pub tolerance: f64,
    pub expert_esor: Option<f64>,
    pub esor_threshold: Option<f64>,
    pub seeds: Vec<SeedResult>,
    pub completed: usize,
    /// Successes over completed seeds.
    pub success_rate: f64,
    pub mean_iterations: Option<f64>,
    pub std_iterations: Option<f64>,
    pub median_iterations: Option<f64>,
    pub mean_bo_iterations: Option<f64>,
    pub std_bo_iterations: Option<f64>,
    pub median_bo_iterations: Option<f64>,
}

/// Mean, sample standard deviation and median.
fn describe(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    };
    (Some(mean), Some(std), Some(median))
}

impl MetricsReport {
    /// Aggregates per-seed rows. Failed seeds do not count as completed.
    pub fn from_seeds(
        algorithm: AlgorithmKind,
        env: EnvKind,
        tolerance: f64,
        expert_esor: Option<f64>,
        seeds: Vec<SeedResult>,
    ) -> Self {
        let done: Vec<&SeedResult> = seeds.iter().filter(|s| s.error.is_none()).collect();
        let successes = done.iter().filter(|s| s.success).count();
        let iters: Vec<f64> = done.iter().filter_map(|s| s.iterations).map(|i| i as f64).collect();
        let bo_iters: Vec<f64> = done.iter().filter_map(|s| s.bo_iterations).map(|i| i as f64).collect();
        let (mean_iterations, std_iterations, median_iterations) = describe(&iters);
        let (mean_bo_iterations, std_bo_iterations, median_bo_iterations) = describe(&bo_iters);
        Self {
            algorithm,
            env,
            tolerance,
            expert_esor,
            esor_threshold: expert_esor.map(|e| esor_threshold(e, tolerance)),
            completed: done.len(),
            success_rate: if done.is_empty() {
                0.0
            } else {
                successes as f64 / done.len() as f64
            },
            seeds,
            mean_iterations,
            std_iterations,
            median_iterations,
            mean_bo_iterations,
            std_bo_iterations,
            median_bo_iterations,
        }
    }

    pub fn successes(&self) -> usize {
        self.seeds.iter().filter(|s| s.success).count()
    }

    /// `seed,success,iterations,bo_iterations,evaluations,best_nll,best_esor,theta_0..,error`
    pub fn per_seed_csv(&self) -> Result<String> {
        let dim = self
            .seeds
            .iter()
            .find_map(|s| s.best_theta.as_ref().map(Vec::len))
            .unwrap_or(0);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["seed", "success", "iterations", "bo_iterations", "evaluations", "best_nll", "best_esor"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..dim).map(|i| format!("theta_{i}")));
        header.push("error".into());
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for s in &self.seeds {
            let mut row = vec![
                s.seed.to_string(),
                u8::from(s.success).to_string(),
                s.iterations.map(|i| i.to_string()).unwrap_or_default(),
                s.bo_iterations.map(|i| i.to_string()).unwrap_or_default(),
                s.evaluations.to_string(),
                opt(s.best_nll),
                opt(s.best_esor),
            ];
            match &s.best_theta {
                Some(t) => row.extend(t.iter().map(|v| fmt_f64(*v))),
                None => row.extend(std::iter::repeat_n(String::new(), dim)),
            }
            row.push(s.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BirlSummary {
    best_theta: Vec<f64>,
    best_nll: f64,
    evaluations: usize,
    n_samples: usize,
    burn_in: usize,
    acceptance_rate: f64,
    posterior_mean: Vec<f64>,
}

fn birl_summary(chain: &BirlChain, n_samples: usize) -> BirlSummary {
    let best = chain.evaluations.best().expect("chain has a start state");
    let dim = best.best_theta.len();
    let mut mean = vec![0.0; dim];
    for s in &chain.samples {
        for (m, t) in mean.iter_mut().zip(&s.theta) {
            *m += t / chain.samples.len() as f64;
        }
    }
    BirlSummary {
        best_theta: best.best_theta.clone(),
        best_nll: best.best_nll,
        evaluations: chain.evaluations.len(),
        n_samples,
        burn_in: chain.burn_in,
        acceptance_rate: chain.acceptance_rate,
        posterior_mean: mean,
    }
}

fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Runs one seed, writing its files under `dir` when given. Returns the
/// trace of evaluations for the metrics step.
fn run_seed(
    config: &ExperimentConfig,
    env: &EnvironmentSpec,
    demos: &[Trajectory],
    seed: u64,
    dir: Option<&Path>,
) -> std::result::Result<BoTrace, (BoTrace, Error)> {
    let write = |trace: &BoTrace, f: &dyn Fn(&Path) -> Result<()>| -> std::result::Result<(), (BoTrace, Error)> {
        match dir {
            Some(d) => f(d).map_err(|e| (trace.clone(), e)),
            None => Ok(()),
        }
    };
    match config.algorithm {
        AlgorithmKind::Birl => {
            let birl = config.birl_config(seed);
            match run_birl(env, demos, &birl) {
                Ok(chain) => {
                    write(&chain.evaluations, &|d| {
                        chain.evaluations.write_csv(d.join("trace.csv"))?;
                        chain.write_csv(d.join("samples.csv"))?;
                        write_atomic(d.join("summary.json"), &json_pretty(&birl_summary(&chain, birl.n_samples))?)
                    })?;
                    Ok(chain.evaluations)
                }
                Err(abort) => {
                    let _ = write(&abort.evaluations, &|d| abort.evaluations.write_csv(d.join("trace.csv")));
                    Err((abort.evaluations, abort.error))
                }
            }
        }
        _ => {
            let bo = config.bo_config(seed);
            match run_boirl(env, demos, &bo) {
                Ok(outcome) => {
                    write(&outcome.trace, &|d| {
                        outcome.trace.write_csv(d.join("trace.csv"))?;
                        write_atomic(d.join("summary.json"), &json_pretty(&outcome.summary(&bo))?)?;
                        if config.metrics.write_gp {
                            outcome.gp().save(d.join("gp.json"))?;
                        }
                        if let (true, Some(basis)) = (config.metrics.write_basis, &outcome.basis) {
                            basis.save(d.join("basis.jsonl"))?;
                        }
                        Ok(())
                    })?;
                    Ok(outcome.trace)
                }
                Err(abort) => {
                    let _ = write(&abort.trace, &|d| abort.trace.write_csv(d.join("trace.csv")));
                    Err((abort.trace, abort.error))
                }
            }
        }
    }
}

/// Runs the configured algorithm for every seed and scores the results.
///
/// With `out`, each seed writes `seed_<s>/trace.csv` and `summary.json`
/// (plus `gp.json`, `basis.jsonl` or `samples.csv` as applicable), and the
/// directory gets `demos.jsonl`, `per_seed.csv` and `report.json`. A failing
/// seed is recorded in the report and does not stop the others.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<MetricsReport> {
    config.validate()?;
    let (env, demos) = config.env_file().build()?;
    if let Some(dir) = out {
        write_trajectories(dir.join("demos.jsonl"), &demos)?;
    }
    let horizon = config
        .metrics
        .horizon
        .unwrap_or_else(|| demos.iter().map(Trajectory::len).max().unwrap_or(1));
    let evaluator = if config.metrics.compute_esor {
        Some(EsorEvaluator::new(
            &env,
            config.metrics.rollouts,
            horizon,
            config.metrics.esor_seed,
            config.soft_vi,
        )?)
    } else {
        None
    };
    let expert = evaluator.as_ref().map(EsorEvaluator::expert).transpose()?;
    let tolerance = config.metrics.tolerance;

    let one = |seed: u64| -> SeedResult {
        let dir = out.map(|d| d.join(format!("seed_{seed}")));
        let (trace, error) = match run_seed(config, &env, &demos, seed, dir.as_deref()) {
            Ok(t) => (t, None),
            Err((t, e)) => (t, Some(e.to_string())),
        };
        let best = trace.best();
        let mut result = SeedResult {
            seed,
            success: false,
            iterations: None,
            bo_iterations: None,
            evaluations: trace.len(),
            best_nll: best.map(|b| b.best_nll),
            best_theta: best.map(|b| b.best_theta.clone()),
            best_esor: None,
            error,
        };
        if let (Some(ev), Some(expert), None) = (&evaluator, expert, &result.error) {
            let scored = (|| -> Result<()> {
                result.iterations = iterations_to_expert(&trace, ev, expert, tolerance)?;
                result.bo_iterations = result.iterations.map(|i| i.saturating_sub(trace.n_init()));
                result.success = result.iterations.is_some();
                if let Some(t) = &result.best_theta {
                    result.best_esor = Some(ev.esor(t)?);
                }
                Ok(())
            })();
            if let Err(e) = scored {
                result.error = Some(e.to_string());
            }
        }
        result
    };
    let seeds: Vec<SeedResult> = if config.parallel_seeds {
        config.seeds.par_iter().map(|&s| one(s)).collect()
    } else {
        config.seeds.iter().map(|&s| one(s)).collect()
    };

    let report = MetricsReport::from_seeds(config.algorithm, env.kind(), tolerance, expert, seeds);
    if let Some(dir) = out {
        write_atomic(dir.join("per_seed.csv"), report.per_seed_csv()?.as_bytes())?;
        write_atomic(dir.join("report.json"), &json_pretty(&report)?)?;
    }
    Ok(report)
}
