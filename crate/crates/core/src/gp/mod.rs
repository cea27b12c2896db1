//! Exact Gaussian-process regression.
//!
//! Posterior at `x` given training inputs `X`, outputs `y` and noise `σ²`:
//! `μ(x) = k(x)ᵀ (K + σ²I)⁻¹ y`, `σ²(x) = k(x,x) − k(x)ᵀ (K + σ²I)⁻¹ k(x)`.

mod kernel;

pub use kernel::{kernel_eval, InputMap, Kernel, KernelKind, KernelSpec};

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numeric::{mean, std_dev};
use kernel::kernel_unchecked;

/// Pivots below this trigger jitter.
const MIN_PIVOT: f64 = 1e-10;
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Default noise variance on standardized outputs.
pub const DEFAULT_NOISE: f64 = 1e-4;

/// Fitted GP. Immutable: adding data means fitting a new state.
#[derive(Debug, Clone)]
pub struct GpState {
    kernel: KernelSpec,
    noise: f64,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    standardized: bool,
    y_mean: f64,
    y_scale: f64,
    jitter: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl GpState {
    /// Fits on raw outputs (zero prior mean in output units).
    pub fn fit(inputs: Vec<Vec<f64>>, outputs: Vec<f64>, kernel: KernelSpec, noise: f64) -> Result<Self> {
        Self::fit_inner(inputs, outputs, kernel, noise, false)
    }

    /// Fits on outputs shifted to zero mean and scaled to unit standard
    /// deviation; predictions are mapped back to output units.
    pub fn fit_standardized(
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
        kernel: KernelSpec,
        noise: f64,
    ) -> Result<Self> {
        Self::fit_inner(inputs, outputs, kernel, noise, true)
    }

    /// Posterior equal to the prior.
    pub fn empty(kernel: KernelSpec, noise: f64) -> Result<Self> {
        Self::fit(Vec::new(), Vec::new(), kernel, noise)
    }

    fn fit_inner(
        inputs: Vec<Vec<f64>>,
        outputs: Vec<f64>,
        kernel: KernelSpec,
        noise: f64,
        standardized: bool,
    ) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                got: outputs.len(),
            });
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::Config(format!("noise variance {noise} must be finite and >= 0")));
        }
        if outputs.iter().any(|y| !y.is_finite()) {
            return Err(Error::Config("GP outputs must be finite".into()));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        let n = inputs.len();
        let (y_mean, y_scale) = if standardized && n > 0 {
            let m = mean(&outputs);
            let s = if n > 1 { std_dev(&outputs) } else { 0.0 };
            (m, if s > 1e-12 { s } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        let y = DVector::from_iterator(n, outputs.iter().map(|v| (v - y_mean) / y_scale));

        if n == 0 {
            return Ok(Self {
                kernel,
                noise,
                inputs,
                outputs,
                standardized,
                y_mean,
                y_scale,
                jitter: 0.0,
                chol: None,
                alpha: y,
            });
        }

        let mut gram = DMatrix::from_fn(n, n, |i, j| kernel_unchecked(&kernel, &inputs[i], &inputs[j]));
        for i in 0..n {
            gram[(i, i)] += noise;
        }
        let (chol, jitter) = factor_with_jitter(gram)?;
        let alpha = chol.solve(&y);
        Ok(Self {
            kernel,
            noise,
            inputs,
            outputs,
            standardized,
            y_mean,
            y_scale,
            jitter,
            chol: Some(chol),
            alpha,
        })
    }

    /// Same data, different kernel hyperparameters.
    pub fn refit(&self, kernel: KernelSpec) -> Result<Self> {
        Self::fit_inner(
            self.inputs.clone(),
            self.outputs.clone(),
            kernel,
            self.noise,
            self.standardized,
        )
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Prior variance in output units.
    pub fn prior_variance(&self) -> f64 {
        self.kernel.signal_variance * self.y_scale * self.y_scale
    }

    /// Diagonal jitter that was needed on top of the noise.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Covariances between `x` and every training input.
    pub fn kernel_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.inputs
            .iter()
            .map(|xi| kernel_eval(&self.kernel, x, xi))
            .collect()
    }

    /// Posterior mean and variance in output units; the variance is clamped
    /// at zero.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        let prior = self.kernel.signal_variance;
        let Some(chol) = &self.chol else {
            return Ok((self.y_mean, prior * self.y_scale * self.y_scale));
        };
        let k = DVector::from_vec(self.kernel_row(x)?);
        let mu = k.dot(&self.alpha);
        let v = chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("Cholesky factor has a positive diagonal");
        let var = (prior - v.norm_squared()).max(0.0);
        Ok((
            self.y_mean + self.y_scale * mu,
            self.y_scale * self.y_scale * var,
        ))
    }

    /// `−½ yᵀ(K+σ²I)⁻¹y − ½ log det(K+σ²I) − (n/2) log 2π` on the fitted
    /// (possibly standardized) outputs.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else {
            return 0.0;
        };
        let n = self.inputs.len();
        let y = DVector::from_iterator(n, self.outputs.iter().map(|v| (v - self.y_mean) / self.y_scale));
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        -0.5 * y.dot(&self.alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln()
    }

    /// Refits with every lengthscale in `grid` and keeps the one with the
    /// highest log marginal likelihood (first one on ties).
    pub fn select_lengthscale(&self, grid: &[f64]) -> Result<Self> {
        self.select_hyperparameters(grid, &[self.noise])
    }

    /// Grid search over lengthscale × noise variance by log marginal
    /// likelihood (first pair on ties, lengthscale varying fastest).
    pub fn select_hyperparameters(&self, lengthscales: &[f64], noises: &[f64]) -> Result<Self> {
        let mut best: Option<(f64, Self)> = None;
        for &noise in noises {
            for &l in lengthscales {
                let candidate = Self::fit_inner(
                    self.inputs.clone(),
                    self.outputs.clone(),
                    self.kernel.with_lengthscale(l)?,
                    noise,
                    self.standardized,
                )?;
                let lml = candidate.log_marginal_likelihood();
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, candidate));
                }
            }
        }
        best.map(|(_, s)| s)
            .ok_or_else(|| Error::Config("empty hyperparameter grid".into()))
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            kernel: self.kernel,
            noise_variance: self.noise,
            standardized: self.standardized,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(&self.snapshot())?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let snap: GpSnapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        snap.restore()
    }
}

/// Serializable GP data; the factorization is recomputed on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub standardized: bool,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
}

impl GpSnapshot {
    pub fn restore(self) -> Result<GpState> {
        GpState::fit_inner(
            self.inputs,
            self.outputs,
            self.kernel,
            self.noise_variance,
            self.standardized,
        )
    }
}

fn factor_with_jitter(gram: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(gram.clone()) {
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d * d));
        if min_pivot >= MIN_PIVOT {
            return Ok((chol, 0.0));
        }
    }
    for jitter in JITTER_LADDER {
        let mut m = gram.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::Factorization {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// `logspace(lo, hi, n)` in base 10.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo)],
        _ => (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}
