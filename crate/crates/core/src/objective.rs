//! The IRL objective: demonstration NLL of the soft policy of `R_θ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::mdp::{nll, rollout, soft_value_iteration, RolloutPolicy, SoftPolicy, SoftViConfig, Trajectory};
use crate::reward::policy_reward_raw;

/// Evaluates `θ ↦ NLL(demos | soft policy of R_θ)` on one environment.
#[derive(Debug, Clone, Copy)]
pub struct NllObjective<'a> {
    env: &'a EnvironmentSpec,
    demos: &'a [Trajectory],
    vi: SoftViConfig,
    include_transition_terms: bool,
}

impl<'a> NllObjective<'a> {
    /// Checks every demonstration against the environment's dynamics.
    pub fn new(
        env: &'a EnvironmentSpec,
        demos: &'a [Trajectory],
        vi: SoftViConfig,
        include_transition_terms: bool,
    ) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::InvalidTrajectory("no demonstrations".into()));
        }
        for d in demos {
            d.validate(env.mdp())?;
        }
        Ok(Self {
            env,
            demos,
            vi,
            include_transition_terms,
        })
    }

    pub fn env(&self) -> &EnvironmentSpec {
        self.env
    }

    pub fn demos(&self) -> &[Trajectory] {
        self.demos
    }

    pub fn policy(&self, theta: &[f64]) -> Result<SoftPolicy> {
        let table = policy_reward_raw(theta, self.env)?;
        soft_value_iteration(self.env.mdp(), &table, &self.vi)
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<f64> {
        let policy = self.policy(theta)?;
        nll(self.demos, &policy, self.env.mdp(), self.include_transition_terms)
    }
}

/// `n` trajectories of length `length` from the soft policy of `θ`, with
/// start states drawn from the environment's start distribution.
pub fn generate_demos(
    env: &EnvironmentSpec,
    theta: &[f64],
    n: usize,
    length: usize,
    seed: u64,
    vi: &SoftViConfig,
) -> Result<Vec<Trajectory>> {
    let table = policy_reward_raw(theta, env)?;
    let policy = soft_value_iteration(env.mdp(), &table, vi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let start = env.mdp().sample_start(&mut rng);
            rollout(env.mdp(), RolloutPolicy::Soft(&policy), start, length, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_gridworld, GridworldLayout, GRIDWORLD_GROUND_TRUTH};

    #[test]
    fn ground_truth_beats_a_distant_reward() {
        let env = build_gridworld(&GridworldLayout::default(), 0.9).unwrap();
        let vi = SoftViConfig::default();
        let demos = generate_demos(&env, &GRIDWORLD_GROUND_TRUTH, 50, 15, 0, &vi).unwrap();
        let obj = NllObjective::new(&env, &demos, vi, true).unwrap();
        let truth = obj.evaluate(&GRIDWORLD_GROUND_TRUTH).unwrap();
        let other = obj.evaluate(&[-1.5, 5.0, 0.0]).unwrap();
        assert!(truth < other, "{truth} vs {other}");
    }

    #[test]
    fn demos_are_reproducible() {
        let env = build_gridworld(&GridworldLayout::default(), 0.9).unwrap();
        let vi = SoftViConfig::default();
        let a = generate_demos(&env, &GRIDWORLD_GROUND_TRUTH, 5, 15, 3, &vi).unwrap();
        let b = generate_demos(&env, &GRIDWORLD_GROUND_TRUTH, 5, 15, 3, &vi).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.len() == 15));
    }

    #[test]
    fn invalid_demo_is_rejected() {
        let env = build_gridworld(&GridworldLayout::default(), 0.9).unwrap();
        // moving right from cell 0 cannot reach cell 7
        let bad = vec![Trajectory::new(vec![(0, 1)], 7).unwrap()];
        assert!(NllObjective::new(&env, &bad, SoftViConfig::default(), true).is_err());
    }
}
