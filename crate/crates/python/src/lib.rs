//! Python bindings: environments, demonstrations, the soft policy and NLL,
//! the ρ projection, a standalone GP, BO-IRL runs and full experiments.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use boirl::bo::{run_boirl as run_boirl_rs, BoConfig, BoOutcome};
use boirl::envs::{build_gridworld, build_roadnet, EnvironmentSpec, GridworldLayout};
use boirl::eval::{esor as esor_rs, load_config, run_experiment as run_experiment_rs};
use boirl::gp::{GpState, KernelKind, KernelSpec};
use boirl::mdp::{SoftViConfig, Trajectory as TrajectoryRs};
use boirl::objective::{generate_demos as generate_demos_rs, NllObjective};
use boirl::projection::{generate_basis as generate_basis_rs, ProjectionBasis, RhoProjector};

fn py_err(e: boirl::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn kernel_kind(name: &str) -> PyResult<KernelKind> {
    match name {
        "rbf" => Ok(KernelKind::Rbf),
        "matern" => Ok(KernelKind::Matern),
        "rho-rbf" | "rho_rbf" => Ok(KernelKind::RhoRbf),
        other => Err(PyValueError::new_err(format!(
            "unknown kernel {other:?} (expected rbf, matern or rho-rbf)"
        ))),
    }
}

fn to_rust(demos: &[Trajectory]) -> Vec<TrajectoryRs> {
    demos.iter().map(|d| d.inner.clone()).collect()
}

/// A tabular environment with its reward family and parameter box.
#[pyclass(frozen, module = "boirl_py")]
struct Environment {
    inner: Arc<EnvironmentSpec>,
}

#[pymethods]
impl Environment {
    /// Gridworld with a seeded random layout, or the default layout when
    /// `layout_seed` is None.
    #[staticmethod]
    #[pyo3(signature = (discount=0.9, layout_seed=None, width=6, height=6, max_coins=8))]
    fn gridworld(
        discount: f64,
        layout_seed: Option<u64>,
        width: usize,
        height: usize,
        max_coins: u32,
    ) -> PyResult<Self> {
        let layout = match layout_seed {
            Some(seed) => GridworldLayout::random(width, height, max_coins, seed),
            None => GridworldLayout::default(),
        };
        let env = build_gridworld(&layout, discount).map_err(py_err)?;
        Ok(Self { inner: Arc::new(env) })
    }

    /// Generated road network.
    #[staticmethod]
    #[pyo3(signature = (n_links=60, seed=0, discount=0.99))]
    fn roadnet(n_links: usize, seed: u64, discount: f64) -> PyResult<Self> {
        let env = build_roadnet(n_links, seed, discount).map_err(py_err)?;
        Ok(Self { inner: Arc::new(env) })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.mdp().n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.mdp().n_actions()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.mdp().discount()
    }

    #[getter]
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    /// `(lower, upper)` of the parameter box.
    #[getter]
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let b = self.inner.theta_bounds();
        (b.lo().to_vec(), b.hi().to_vec())
    }

    #[getter]
    fn ground_truth(&self) -> Option<Vec<f64>> {
        self.inner.ground_truth().map(|p| p.theta().to_vec())
    }

    /// Per-state reward for `theta`.
    fn state_rewards(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        boirl::reward::state_rewards_raw(&theta, &self.inner).map_err(py_err)
    }

    /// Soft-optimal policy for `theta` as `(probs, q)`, each indexed
    /// `[state][action]`.
    fn soft_policy(&self, py: Python<'_>, theta: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let env = self.inner.clone();
        let policy = py
            .detach(move || {
                let table = boirl::reward::policy_reward_raw(&theta, &env)?;
                boirl::mdp::soft_value_iteration(env.mdp(), &table, &SoftViConfig::default())
            })
            .map_err(py_err)?;
        let a = policy.n_actions();
        let rows = |v: &[f64]| v.chunks(a).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Ok((rows(policy.probs()), rows(policy.q_values())))
    }

    fn __repr__(&self) -> String {
        format!(
            "Environment(kind={:?}, n_states={}, n_actions={}, discount={})",
            self.inner.kind(),
            self.n_states(),
            self.n_actions(),
            self.discount()
        )
    }
}

/// A finite trajectory: `(state, action)` steps and the state reached last.
#[pyclass(frozen, from_py_object, module = "boirl_py")]
#[derive(Clone)]
struct Trajectory {
    inner: TrajectoryRs,
}

#[pymethods]
impl Trajectory {
    #[new]
    fn new(steps: Vec<(usize, usize)>, terminal: usize) -> PyResult<Self> {
        Ok(Self {
            inner: TrajectoryRs::new(steps, terminal).map_err(py_err)?,
        })
    }

    #[getter]
    fn steps(&self) -> Vec<(usize, usize)> {
        self.inner.steps().to_vec()
    }

    #[getter]
    fn terminal(&self) -> usize {
        self.inner.terminal()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Trajectory(len={}, terminal={})", self.inner.len(), self.inner.terminal())
    }
}

/// Rollouts of the soft policy of `theta`.
#[pyfunction]
#[pyo3(signature = (env, theta, n, length, seed=0))]
fn generate_demos(env: &Environment, theta: Vec<f64>, n: usize, length: usize, seed: u64) -> PyResult<Vec<Trajectory>> {
    let demos = generate_demos_rs(&env.inner, &theta, n, length, seed, &SoftViConfig::default()).map_err(py_err)?;
    Ok(demos.into_iter().map(|inner| Trajectory { inner }).collect())
}

/// Negative log-likelihood of `demos` under the soft policy of `theta`.
#[pyfunction]
#[pyo3(signature = (env, demos, theta, include_transition_terms=true))]
fn nll(
    py: Python<'_>,
    env: &Environment,
    demos: Vec<Trajectory>,
    theta: Vec<f64>,
    include_transition_terms: bool,
) -> PyResult<f64> {
    let env = env.inner.clone();
    let demos = to_rust(&demos);
    py.detach(move || {
        let objective = NllObjective::new(&env, &demos, SoftViConfig::default(), include_transition_terms)?;
        objective.evaluate(&theta)
    })
    .map_err(py_err)
}

/// Mean discounted ground-truth return of the soft policy of `theta`.
#[pyfunction]
#[pyo3(signature = (env, theta, n_rollouts=2000, horizon=20, seed=0))]
fn esor(py: Python<'_>, env: &Environment, theta: Vec<f64>, n_rollouts: usize, horizon: usize, seed: u64) -> PyResult<f64> {
    let env = env.inner.clone();
    py.detach(move || {
        let gt = env.ground_truth().ok_or(boirl::Error::MissingGroundTruth)?;
        let params = env.params(theta)?;
        esor_rs(&params, &env, gt, n_rollouts, horizon, seed, &SoftViConfig::default())
    })
    .map_err(py_err)
}

/// A ρ basis bound to an environment.
#[pyclass(frozen, module = "boirl_py")]
struct Basis {
    basis: ProjectionBasis,
    projector: RhoProjector,
}

#[pymethods]
impl Basis {
    #[getter]
    fn k(&self) -> usize {
        self.basis.k()
    }

    /// ρ-vector of `theta`.
    fn rho(&self, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.projector.project(&theta).map_err(py_err)?.values().to_vec())
    }

    fn to_jsonl(&self) -> PyResult<String> {
        self.basis.to_jsonl().map_err(py_err)
    }
}

/// Samples `k` demonstrations and `m` uniform rollouts for each.
#[pyfunction]
#[pyo3(signature = (env, demos, k=10, m=5, seed=0))]
fn generate_basis(env: &Environment, demos: Vec<Trajectory>, k: usize, m: usize, seed: u64) -> PyResult<Basis> {
    let basis = generate_basis_rs(&to_rust(&demos), env.inner.mdp(), k, m, seed).map_err(py_err)?;
    let projector = RhoProjector::new(&basis, &env.inner);
    Ok(Basis { basis, projector })
}

/// GP regression on raw inputs with fixed hyperparameters.
#[pyclass(frozen, module = "boirl_py")]
struct GaussianProcess {
    inner: GpState,
}

#[pymethods]
impl GaussianProcess {
    #[new]
    #[pyo3(signature = (inputs, outputs, kernel="rbf", lengthscale=1.0, signal_variance=1.0, noise=1e-4))]
    fn new(
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
        kernel: &str,
        lengthscale: f64,
        signal_variance: f64,
        noise: f64,
    ) -> PyResult<Self> {
        let kind = kernel_kind(kernel)?;
        if kind == KernelKind::RhoRbf {
            return Err(PyValueError::new_err("rho-rbf needs an environment; use run_boirl"));
        }
        let spec = KernelSpec::new(kind, lengthscale, signal_variance).map_err(py_err)?;
        Ok(Self {
            inner: GpState::fit(inputs, outputs, spec, noise).map_err(py_err)?,
        })
    }

    /// Posterior `(mean, variance)` at `x`.
    fn posterior(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.posterior(&x).map_err(py_err)
    }

    /// Expected improvement below `f_best` at `x`.
    fn expected_improvement(&self, x: Vec<f64>, f_best: f64) -> PyResult<f64> {
        let (mu, var) = self.inner.posterior(&x).map_err(py_err)?;
        Ok(boirl::bo::ei_from_moments(mu, var, f_best, self.inner.prior_variance()))
    }

    fn log_marginal_likelihood(&self) -> f64 {
        self.inner.log_marginal_likelihood()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Result of one BO-IRL run.
#[pyclass(frozen, module = "boirl_py")]
struct BoResult {
    inner: BoOutcome,
}

#[pymethods]
impl BoResult {
    #[getter]
    fn best_theta(&self) -> Vec<f64> {
        self.inner.best_theta.clone()
    }

    #[getter]
    fn best_nll(&self) -> f64 {
        self.inner.best_nll
    }

    /// Every evaluated θ in order.
    #[getter]
    fn thetas(&self) -> Vec<Vec<f64>> {
        self.inner.trace.records().iter().map(|r| r.theta.clone()).collect()
    }

    #[getter]
    fn nlls(&self) -> Vec<f64> {
        self.inner.trace.records().iter().map(|r| r.nll).collect()
    }

    /// Surrogate posterior `(mean, variance)` at `theta`, in NLL units.
    fn posterior(&self, theta: Vec<f64>) -> PyResult<(f64, f64)> {
        self.inner.surrogate.posterior(&theta).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.trace.len()
    }
}

/// BO-IRL on `env` from `demos`.
#[pyfunction]
#[pyo3(signature = (env, demos, budget=100, kernel="rho-rbf", seed=0, n_init=5))]
fn run_boirl(
    py: Python<'_>,
    env: &Environment,
    demos: Vec<Trajectory>,
    budget: usize,
    kernel: &str,
    seed: u64,
    n_init: usize,
) -> PyResult<BoResult> {
    let config = BoConfig {
        budget,
        n_init,
        kernel: kernel_kind(kernel)?,
        seed,
        ..Default::default()
    };
    let env = env.inner.clone();
    let demos = to_rust(&demos);
    let outcome = py
        .detach(move || run_boirl_rs(&env, &demos, &config))
        .map_err(|abort| py_err(abort.error))?;
    Ok(BoResult { inner: outcome })
}

/// Runs the experiment described by a TOML config and returns the metrics
/// report as JSON.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None))]
fn run_experiment(py: Python<'_>, config_path: PathBuf, out_dir: Option<PathBuf>) -> PyResult<String> {
    let report = py
        .detach(move || {
            let config = load_config(&config_path)?;
            run_experiment_rs(&config, out_dir.as_deref())
        })
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn boirl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Environment>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<Basis>()?;
    m.add_class::<GaussianProcess>()?;
    m.add_class::<BoResult>()?;
    m.add_function(wrap_pyfunction!(generate_demos, m)?)?;
    m.add_function(wrap_pyfunction!(nll, m)?)?;
    m.add_function(wrap_pyfunction!(esor, m)?)?;
    m.add_function(wrap_pyfunction!(generate_basis, m)?)?;
    m.add_function(wrap_pyfunction!(run_boirl, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
