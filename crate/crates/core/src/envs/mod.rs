//! Concrete environments and potential-based reward shaping.

mod gridworld;
mod roadnet;

pub use gridworld::{build_gridworld, GridworldLayout, GRIDWORLD_GROUND_TRUTH};
pub use roadnet::{
    build_roadnet, import_roadnet, parse_roadnet_csv, RoadNetworkGraph, Successor,
    ROADNET_GROUND_TRUTH, ROADNET_UTURN_WEIGHT,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{RewardTable, TabularMdp};
use crate::reward::{Bounds, RewardFamily, RewardModel, RewardParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    Gridworld,
    Roadnet,
}

/// An MDP together with the state features, reward family, parameter box
/// and (for synthetic environments) the ground-truth parameters.
#[derive(Debug, Clone)]
pub struct EnvironmentSpec {
    kind: EnvKind,
    mdp: TabularMdp,
    state_features: Vec<Vec<f64>>,
    model: RewardModel,
    theta_bounds: Bounds,
    ground_truth: Option<RewardParams>,
}

impl EnvironmentSpec {
    pub fn new(
        kind: EnvKind,
        mdp: TabularMdp,
        state_features: Vec<Vec<f64>>,
        model: RewardModel,
        theta_bounds: Bounds,
        ground_truth: Option<Vec<f64>>,
    ) -> Result<Self> {
        if state_features.len() != mdp.n_states() {
            return Err(Error::DimensionMismatch {
                expected: mdp.n_states(),
                got: state_features.len(),
            });
        }
        if let Some(bad) = state_features.iter().find(|f| f.len() != model.n_features()) {
            return Err(Error::DimensionMismatch {
                expected: model.n_features(),
                got: bad.len(),
            });
        }
        if theta_bounds.dim() != model.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.param_dim(),
                got: theta_bounds.dim(),
            });
        }
        let ground_truth = ground_truth
            .map(|t| RewardParams::new(t, model.family(), theta_bounds.clone()))
            .transpose()?;
        Ok(Self {
            kind,
            mdp,
            state_features,
            model,
            theta_bounds,
            ground_truth,
        })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state_features(&self) -> &[Vec<f64>] {
        &self.state_features
    }

    pub fn reward_model(&self) -> &RewardModel {
        &self.model
    }

    pub fn family(&self) -> RewardFamily {
        self.model.family()
    }

    pub fn theta_bounds(&self) -> &Bounds {
        &self.theta_bounds
    }

    pub fn ground_truth(&self) -> Option<&RewardParams> {
        self.ground_truth.as_ref()
    }

    pub fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    /// Wraps θ as [`RewardParams`] of this environment's family and box.
    pub fn params(&self, theta: Vec<f64>) -> Result<RewardParams> {
        RewardParams::new(theta, self.family(), self.theta_bounds.clone())
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        self.mdp = self.mdp.with_discount(discount)?;
        Ok(self)
    }
}

/// Potential-based shaping: `R'(s,a,s') = R(s,a,s') + γ φ(s') − φ(s)`.
pub fn shape_reward(reward: &RewardTable, potential: &[f64], gamma: f64) -> Result<RewardTable> {
    if potential.len() != reward.n_states() {
        return Err(Error::DimensionMismatch {
            expected: reward.n_states(),
            got: potential.len(),
        });
    }
    RewardTable::from_fn(reward.n_states(), reward.n_actions(), |s, a, next| {
        reward.get(s, a, next) + gamma * potential[next] - potential[s]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_trajectory, traj_reward, RolloutPolicy};
    use approx::assert_relative_eq;

    fn table() -> RewardTable {
        RewardTable::from_fn(3, 2, |s, a, n| (s * 7 + a * 3 + n) as f64 * 0.1).unwrap()
    }

    #[test]
    fn zero_potential_is_identity() {
        let r = table();
        assert_eq!(shape_reward(&r, &[0.0; 3], 0.9).unwrap(), r);
    }

    #[test]
    fn constant_potential_is_uniform_shift() {
        let r = table();
        let c = 2.5;
        let shaped = shape_reward(&r, &[c; 3], 0.9).unwrap();
        for (a, b) in shaped.values().iter().zip(r.values()) {
            assert_relative_eq!(a - b, (0.9 - 1.0) * c, epsilon = 1e-12);
        }
    }

    #[test]
    fn shaping_telescopes_along_trajectories() {
        let mdp = TabularMdp::from_sparse(
            3,
            2,
            vec![
                vec![(0, 0.5), (1, 0.5)],
                vec![(2, 1.0)],
                vec![(1, 0.3), (2, 0.7)],
                vec![(0, 1.0)],
                vec![(0, 0.2), (1, 0.2), (2, 0.6)],
                vec![(2, 1.0)],
            ],
            0.8,
            vec![(0, 1.0)],
        )
        .unwrap();
        let r = table();
        let phi = [1.3, -0.4, 2.2];
        let shaped = shape_reward(&r, &phi, 0.8).unwrap();
        for seed in 0..20 {
            let t = sample_trajectory(&mdp, RolloutPolicy::Uniform, seed as usize % 3, 7, seed).unwrap();
            let diff = traj_reward(&t, &shaped, 0.8) - traj_reward(&t, &r, 0.8);
            let expected = 0.8f64.powi(7) * phi[t.terminal()] - phi[t.start()];
            assert_relative_eq!(diff, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_rejects_wrong_potential_length() {
        assert!(shape_reward(&table(), &[0.0; 2], 0.9).is_err());
    }
}
