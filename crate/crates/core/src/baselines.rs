//! Bayesian IRL baseline: a random-walk Metropolis–Hastings chain over the
//! parameter box, targeting `exp(−α · NLL(θ))` under a uniform prior.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bo::{BoTrace, Phase};
use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::mdp::{SoftViConfig, Trajectory};
use crate::objective::NllObjective;
use crate::reward::Bounds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BirlConfig {
    /// Chain length including the starting state.
    pub n_samples: usize,
    /// Proposal standard deviation as a fraction of each bound width.
    pub step_fraction: f64,
    /// Explicit per-coordinate proposal standard deviations; overrides
    /// `step_fraction`.
    pub step_size: Option<Vec<f64>>,
    pub inverse_temperature: f64,
    /// Defaults to 10% of `n_samples`.
    pub burn_in: Option<usize>,
    pub soft_vi: SoftViConfig,
    pub include_transition_terms: bool,
    pub seed: u64,
}

impl Default for BirlConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            step_fraction: 0.05,
            step_size: None,
            inverse_temperature: 1.0,
            burn_in: None,
            soft_vi: SoftViConfig::default(),
            include_transition_terms: true,
            seed: 0,
        }
    }
}

impl BirlConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_samples / 10)
    }

    fn steps(&self, bounds: &Bounds) -> Result<Vec<f64>> {
        let steps = match &self.step_size {
            Some(s) => s.clone(),
            None => (0..bounds.dim()).map(|i| self.step_fraction * bounds.width(i)).collect(),
        };
        if steps.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                got: steps.len(),
            });
        }
        for (i, s) in steps.iter().enumerate() {
            if bounds.width(i) > 0.0 && !(*s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("step size {s} for coordinate {i} must be positive")));
            }
        }
        Ok(steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.burn_in() >= self.n_samples {
            return Err(Error::Config(format!(
                "need n_samples ({}) > burn_in ({})",
                self.n_samples,
                self.burn_in()
            )));
        }
        if !(self.inverse_temperature > 0.0 && self.inverse_temperature.is_finite()) {
            return Err(Error::Config("inverse_temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirlSample {
    pub idx: usize,
    pub theta: Vec<f64>,
    pub nll: f64,
    /// Whether this state came from an accepted proposal.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirlChain {
    /// Post-burn-in chain states.
    pub samples: Vec<BirlSample>,
    pub acceptance_rate: f64,
    pub burn_in: usize,
    /// Every objective evaluation in order (start state, then proposals).
    pub evaluations: BoTrace,
}

impl BirlChain {
    /// `idx,theta_0..theta_{d-1},nll,accepted`
    pub fn to_csv(&self) -> String {
        let dim = self.samples.first().map_or(0, |s| s.theta.len());
        let mut out = String::from("idx");
        for i in 0..dim {
            write!(out, ",theta_{i}").unwrap();
        }
        out.push_str(",nll,accepted\n");
        for s in &self.samples {
            write!(out, "{}", s.idx).unwrap();
            for t in &s.theta {
                write!(out, ",{}", fmt_f64(*t)).unwrap();
            }
            writeln!(out, ",{},{}", fmt_f64(s.nll), u8::from(s.accepted)).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// A failed chain: the error and the evaluations made before it.
#[derive(Debug)]
pub struct BirlAbort {
    pub evaluations: BoTrace,
    pub error: Error,
}

impl From<Box<BirlAbort>> for Error {
    fn from(abort: Box<BirlAbort>) -> Self {
        Error::Aborted {
            completed: abort.evaluations.len(),
            source: Box::new(abort.error),
        }
    }
}

/// Runs the chain on an arbitrary objective. The start is uniform in the
/// box unless given.
pub fn run_mh(
    objective: &mut dyn FnMut(&[f64]) -> Result<f64>,
    bounds: &Bounds,
    config: &BirlConfig,
    start: Option<Vec<f64>>,
) -> std::result::Result<BirlChain, Box<BirlAbort>> {
    let mut evaluations = BoTrace::default();
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(Box::new(BirlAbort { evaluations, error })),
            }
        };
    }
    attempt!(config.validate());
    let steps = attempt!(config.steps(bounds));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = match start {
        Some(t) => {
            attempt!(bounds.check(&t));
            t
        }
        None => (0..bounds.dim())
            .map(|i| bounds.lo()[i] + rng.random::<f64>() * bounds.width(i))
            .collect(),
    };
    let mut current = attempt!(objective(&theta));
    evaluations.push(Phase::Init, theta.clone(), current, 0.0);

    let burn_in = config.burn_in();
    let mut samples = Vec::with_capacity(config.n_samples - burn_in);
    if burn_in == 0 {
        samples.push(BirlSample {
            idx: 0,
            theta: theta.clone(),
            nll: current,
            accepted: true,
        });
    }
    let mut accepted_count = 0usize;
    for idx in 1..config.n_samples {
        let proposal: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                bounds.reflect(i, t + steps[i] * z)
            })
            .collect();
        let value = attempt!(objective(&proposal));
        evaluations.push(Phase::Bo, proposal.clone(), value, 0.0);
        let log_ratio = -config.inverse_temperature * (value - current);
        let u: f64 = rng.random();
        let accepted = log_ratio >= 0.0 || u < log_ratio.exp();
        if accepted {
            theta = proposal;
            current = value;
            accepted_count += 1;
        }
        if idx >= burn_in {
            samples.push(BirlSample {
                idx,
                theta: theta.clone(),
                nll: current,
                accepted,
            });
        }
    }
    let proposals = config.n_samples - 1;
    Ok(BirlChain {
        samples,
        acceptance_rate: if proposals == 0 {
            1.0
        } else {
            accepted_count as f64 / proposals as f64
        },
        burn_in,
        evaluations,
    })
}

/// The chain on the demonstration NLL of `env`.
pub fn run_birl(
    env: &EnvironmentSpec,
    demos: &[Trajectory],
    config: &BirlConfig,
) -> std::result::Result<BirlChain, Box<BirlAbort>> {
    let objective = NllObjective::new(env, demos, config.soft_vi, config.include_transition_terms)
        .map_err(|error| {
            Box::new(BirlAbort {
                evaluations: BoTrace::default(),
                error,
            })
        })?;
    run_mh(&mut |t| objective.evaluate(t), env.theta_bounds(), config, None)
}
