//! Reward parameters, their bounding box, and the reward families that turn
//! a parameter vector into a reward table.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::mdp::RewardTable;
use crate::numeric::sigmoid;

/// Scale of the translated-logistic state reward.
pub const LOGISTIC_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardFamily {
    LogisticState,
    LinearFeatures,
}

impl fmt::Display for RewardFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardFamily::LogisticState => f.write_str("logistic-state"),
            RewardFamily::LinearFeatures => f.write_str("linear-features"),
        }
    }
}

/// Axis-aligned box of closed intervals. A coordinate with `lo == hi` is
/// frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidBounds(format!(
                "lower has {} entries, upper has {}",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidBounds(format!("coordinate {i}: [{l}, {h}]")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    /// Indices of coordinates with positive width.
    pub fn free_dims(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.width(i) > 0.0).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| t >= l && t <= h)
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        for (i, &t) in theta.iter().enumerate() {
            if !(t >= self.lo[i] && t <= self.hi[i]) {
                return Err(Error::OutOfBounds {
                    index: i,
                    value: t,
                    lo: self.lo[i],
                    hi: self.hi[i],
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Maps to the unit cube; frozen coordinates map to 0.
    pub fn whiten(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let w = self.width(i);
                if w > 0.0 {
                    (t - self.lo[i]) / w
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn unwhiten(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .enumerate()
            .map(|(i, &u)| self.lo[i] + u * self.width(i))
            .collect()
    }

    /// Reflects a coordinate back into `[lo, hi]` (mirror at the walls).
    pub fn reflect(&self, i: usize, value: f64) -> f64 {
        let (lo, hi) = (self.lo[i], self.hi[i]);
        let w = hi - lo;
        if w <= 0.0 {
            return lo;
        }
        let period = 2.0 * w;
        let mut x = (value - lo).rem_euclid(period);
        if x > w {
            x = period - x;
        }
        lo + x
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// A point θ of the parameter box together with the family that interprets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    theta: Vec<f64>,
    family: RewardFamily,
    bounds: Bounds,
}

impl RewardParams {
    pub fn new(theta: Vec<f64>, family: RewardFamily, bounds: Bounds) -> Result<Self> {
        bounds.check(&theta)?;
        Ok(Self {
            theta,
            family,
            bounds,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn family(&self) -> RewardFamily {
        self.family
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// How a parameter vector becomes per-state reward weights.
///
/// Every environment here rewards the state being entered:
/// `R(s, a, s') = w(θ) · f(s')` for fixed state features `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RewardModel {
    /// `f(s)` is the one-hot of the state's level `ψ(s)` among `levels`, and
    /// `w_c = 10 / (1 + exp(−θ0 (level_c − θ1))) + θ2`.
    LogisticState { levels: Vec<f64> },
    /// `w = θ`.
    LinearFeatures { n_features: usize },
}

impl RewardModel {
    pub fn family(&self) -> RewardFamily {
        match self {
            RewardModel::LogisticState { .. } => RewardFamily::LogisticState,
            RewardModel::LinearFeatures { .. } => RewardFamily::LinearFeatures,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            RewardModel::LogisticState { .. } => 3,
            RewardModel::LinearFeatures { n_features } => *n_features,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            RewardModel::LogisticState { levels } => levels.len(),
            RewardModel::LinearFeatures { n_features } => *n_features,
        }
    }

    /// Feature weights `w(θ)`.
    pub fn weights(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        let w: Vec<f64> = match self {
            RewardModel::LogisticState { levels } => {
                let (steepness, midpoint, translation) = (theta[0], theta[1], theta[2]);
                levels
                    .iter()
                    .map(|&psi| LOGISTIC_SCALE * sigmoid(steepness * (psi - midpoint)) + translation)
                    .collect()
            }
            RewardModel::LinearFeatures { .. } => theta.to_vec(),
        };
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteReward);
        }
        Ok(w)
    }

    /// `θ` with every coordinate that only adds a constant to all rewards
    /// set to zero. Such a constant leaves the soft-optimal policy unchanged,
    /// so policy computations use this to make the symmetry exact.
    pub fn policy_theta(&self, theta: &[f64]) -> Vec<f64> {
        let mut t = theta.to_vec();
        if let (RewardModel::LogisticState { .. }, Some(tr)) = (self, t.get_mut(2)) {
            *tr = 0.0;
        }
        t
    }
}

pub(crate) fn check_family(params: &RewardParams, env: &EnvironmentSpec) -> Result<()> {
    if params.family() != env.family() {
        return Err(Error::FamilyMismatch {
            params: params.family(),
            env: env.family(),
        });
    }
    Ok(())
}

/// Per-state reward `r(s) = w(θ) · f(s)` for an unchecked parameter slice.
pub fn state_rewards_raw(theta: &[f64], env: &EnvironmentSpec) -> Result<Vec<f64>> {
    let w = env.reward_model().weights(theta)?;
    let r: Vec<f64> = env
        .state_features()
        .iter()
        .map(|f| f.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    if r.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFiniteReward);
    }
    Ok(r)
}

pub fn state_rewards(params: &RewardParams, env: &EnvironmentSpec) -> Result<Vec<f64>> {
    check_family(params, env)?;
    state_rewards_raw(params.theta(), env)
}

/// Reward table `R(s, a, s') = r(s')` for parameters in `env`'s family.
pub fn eval_reward(params: &RewardParams, env: &EnvironmentSpec) -> Result<RewardTable> {
    let r = state_rewards(params, env)?;
    RewardTable::from_arrival_rewards(env.mdp().n_actions(), &r)
}

pub fn eval_reward_raw(theta: &[f64], env: &EnvironmentSpec) -> Result<RewardTable> {
    let r = state_rewards_raw(theta, env)?;
    RewardTable::from_arrival_rewards(env.mdp().n_actions(), &r)
}

/// Reward table used to compute the soft policy of `theta`: the family's
/// policy-irrelevant translation is dropped (see
/// [`RewardModel::policy_theta`]), so Q-values are those of the
/// translation-free reward.
pub fn policy_reward_raw(theta: &[f64], env: &EnvironmentSpec) -> Result<RewardTable> {
    eval_reward_raw(&env.reward_model().policy_theta(theta), env)
}
