//! The ρ-projection.
//!
//! For an expert trajectory τ and M uniform-policy rollouts τ' sharing its
//! start state and length, `ρ_τ(θ) = exp R_θ(τ) / (exp R_θ(τ) + Σ exp R_θ(τ'))`
//! where `R_θ` is the discounted return. Stacking ρ over K expert
//! trajectories gives the ρ-vector on which the ρ-RBF kernel operates.
//!
//! Rewards that differ by a constant translation (or by potential-based
//! shaping, up to a `γ^L` term) give the same ρ-vector.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::mdp::{rollout, traj_reward, RewardTable, RolloutPolicy, TabularMdp, Trajectory, TrajectoryRecord};
use crate::numeric::log_sum_exp;
use crate::reward::{eval_reward, RewardParams};

/// Smallest and largest values ρ is allowed to take.
const RHO_MIN: f64 = f64::MIN_POSITIVE;
const RHO_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// An expert trajectory and its uniform-policy comparison set.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEntry {
    expert: Trajectory,
    rollouts: Vec<Trajectory>,
}

impl BasisEntry {
    pub fn new(expert: Trajectory, rollouts: Vec<Trajectory>) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::Config("a basis entry needs at least one rollout".into()));
        }
        for (i, r) in rollouts.iter().enumerate() {
            if r.start() != expert.start() || r.len() != expert.len() {
                return Err(Error::InvalidTrajectory(format!(
                    "rollout {i} starts at {} with length {}, expert starts at {} with length {}",
                    r.start(),
                    r.len(),
                    expert.start(),
                    expert.len()
                )));
            }
        }
        Ok(Self { expert, rollouts })
    }

    pub fn expert(&self) -> &Trajectory {
        &self.expert
    }

    pub fn rollouts(&self) -> &[Trajectory] {
        &self.rollouts
    }
}

/// K basis entries plus the discount used to score them. Frozen once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    entries: Vec<BasisEntry>,
    discount: f64,
}

impl ProjectionBasis {
    pub fn new(entries: Vec<BasisEntry>, discount: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("a projection basis needs at least one entry".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Config(format!("discount {discount} not in (0, 1)")));
        }
        Ok(Self { entries, discount })
    }

    pub fn entries(&self) -> &[BasisEntry] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// JSON lines, one per trajectory, grouped by entry with the expert first.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for (k, entry) in self.entries.iter().enumerate() {
            let lines = std::iter::once((BasisRole::Expert, &entry.expert))
                .chain(entry.rollouts.iter().map(|r| (BasisRole::Rollout, r)));
            for (role, traj) in lines {
                let line = BasisLine {
                    entry: k,
                    role,
                    discount: self.discount,
                    trajectory: TrajectoryRecord::from(traj),
                };
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entries: Vec<(Option<Trajectory>, Vec<Trajectory>)> = Vec::new();
        let mut discount = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: BasisLine = serde_json::from_str(raw)
                .map_err(|e| Error::InvalidTrajectory(format!("basis line {}: {e}", i + 1)))?;
            match discount {
                None => discount = Some(line.discount),
                Some(d) if d != line.discount => {
                    return Err(Error::Config(format!("basis line {}: inconsistent discount", i + 1)))
                }
                _ => {}
            }
            if line.entry > entries.len() {
                return Err(Error::Config(format!("basis line {}: entries out of order", i + 1)));
            }
            if line.entry == entries.len() {
                entries.push((None, Vec::new()));
            }
            let traj = Trajectory::try_from(line.trajectory)?;
            let slot = &mut entries[line.entry];
            match line.role {
                BasisRole::Expert if slot.0.is_none() => slot.0 = Some(traj),
                BasisRole::Expert => {
                    return Err(Error::Config(format!("entry {} has two experts", line.entry)))
                }
                BasisRole::Rollout => slot.1.push(traj),
            }
        }
        let entries = entries
            .into_iter()
            .enumerate()
            .map(|(k, (expert, rollouts))| {
                let expert =
                    expert.ok_or_else(|| Error::Config(format!("entry {k} has no expert")))?;
                BasisEntry::new(expert, rollouts)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, discount.unwrap_or(f64::NAN))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BasisRole {
    Expert,
    Rollout,
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisLine {
    entry: usize,
    role: BasisRole,
    discount: f64,
    #[serde(flatten)]
    trajectory: TrajectoryRecord,
}

/// Picks `k` demonstrations without replacement and pairs each with `m`
/// uniform-policy rollouts of the same start state and length.
pub fn generate_basis(
    demos: &[Trajectory],
    mdp: &TabularMdp,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<ProjectionBasis> {
    if k > demos.len() {
        return Err(Error::NotEnoughDemos {
            requested: k,
            available: demos.len(),
        });
    }
    if k == 0 || m == 0 {
        return Err(Error::Config("K and M must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, demos.len(), k);
    let mut entries = Vec::with_capacity(k);
    for idx in chosen.iter() {
        let expert = demos[idx].clone();
        let rollouts = (0..m)
            .map(|_| rollout(mdp, RolloutPolicy::Uniform, expert.start(), expert.len(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        entries.push(BasisEntry::new(expert, rollouts)?);
    }
    ProjectionBasis::new(entries, mdp.discount())
}

/// Softmax weight of the first return against all returns, in log space.
///
/// Returns are taken relative to the expert's before the log-sum-exp, which
/// keeps full relative precision when all returns are large and close.
pub fn rho_from_returns(expert: f64, rollouts: &[f64]) -> f64 {
    let mut diffs = Vec::with_capacity(rollouts.len() + 1);
    diffs.push(0.0);
    diffs.extend(rollouts.iter().map(|r| r - expert));
    (-log_sum_exp(&diffs)).exp().clamp(RHO_MIN, RHO_MAX)
}

/// ρ of one entry under an arbitrary reward table.
pub fn rho_with_table(reward: &RewardTable, entry: &BasisEntry, discount: f64) -> f64 {
    let expert = traj_reward(&entry.expert, reward, discount);
    let rollouts: Vec<f64> = entry
        .rollouts
        .iter()
        .map(|t| traj_reward(t, reward, discount))
        .collect();
    rho_from_returns(expert, &rollouts)
}

pub fn rho(params: &RewardParams, entry: &BasisEntry, env: &EnvironmentSpec) -> Result<f64> {
    let table = eval_reward(params, env)?;
    Ok(rho_with_table(&table, entry, env.mdp().discount()))
}

/// K values in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoVector(Vec<f64>);

impl RhoVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::Config("ρ components must lie in (0, 1)".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn rho_vector_with_table(reward: &RewardTable, basis: &ProjectionBasis) -> RhoVector {
    RhoVector(
        basis
            .entries
            .iter()
            .map(|e| rho_with_table(reward, e, basis.discount))
            .collect(),
    )
}

pub fn rho_vector(
    params: &RewardParams,
    basis: &ProjectionBasis,
    env: &EnvironmentSpec,
) -> Result<RhoVector> {
    let table = eval_reward(params, env)?;
    Ok(rho_vector_with_table(&table, basis))
}

/// Precomputed discounted feature sums so a return is a dot product
/// `w(θ) · Σ_t γ^t f(s_{t+1})`.
#[derive(Debug, Clone)]
pub struct RhoProjector {
    env: EnvironmentSpec,
    // per entry: expert summary followed by rollout summaries
    summaries: Vec<Vec<Vec<f64>>>,
}

impl RhoProjector {
    pub fn new(basis: &ProjectionBasis, env: &EnvironmentSpec) -> Self {
        let gamma = basis.discount;
        let nf = env.reward_model().n_features();
        let features = env.state_features();
        let summarize = |t: &Trajectory| {
            let mut acc = vec![0.0; nf];
            let mut weight = 1.0;
            for (_, _, next) in t.transitions() {
                for (a, f) in acc.iter_mut().zip(&features[next]) {
                    *a += weight * f;
                }
                weight *= gamma;
            }
            acc
        };
        let summaries = basis
            .entries
            .iter()
            .map(|e| {
                std::iter::once(&e.expert)
                    .chain(&e.rollouts)
                    .map(summarize)
                    .collect()
            })
            .collect();
        Self {
            env: env.clone(),
            summaries,
        }
    }

    pub fn k(&self) -> usize {
        self.summaries.len()
    }

    /// ρ-vector for a raw parameter slice (bounds are not checked).
    pub fn project(&self, theta: &[f64]) -> Result<RhoVector> {
        let w = self.env.reward_model().weights(theta)?;
        let mut returns = Vec::new();
        let values = self
            .summaries
            .iter()
            .map(|entry| {
                returns.clear();
                returns.extend(
                    entry
                        .iter()
                        .map(|phi| phi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()),
                );
                rho_from_returns(returns[0], &returns[1..])
            })
            .collect();
        Ok(RhoVector(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_gridworld, GridworldLayout};
    use crate::mdp::{sample_trajectory, soft_value_iteration, SoftViConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gridworld_basis(seed: u64) -> (EnvironmentSpec, ProjectionBasis) {
        let env = build_gridworld(&GridworldLayout::default(), 0.9).unwrap();
        let gt = env.ground_truth().unwrap().clone();
        let policy =
            soft_value_iteration(env.mdp(), &eval_reward(&gt, &env).unwrap(), &SoftViConfig::default())
                .unwrap();
        let demos: Vec<Trajectory> = (0..12)
            .map(|i| {
                sample_trajectory(env.mdp(), RolloutPolicy::Soft(&policy), i % 36, 15, seed * 100 + i as u64)
                    .unwrap()
            })
            .collect();
        let basis = generate_basis(&demos, env.mdp(), 10, 5, seed).unwrap();
        (env, basis)
    }

    #[test]
    fn uniform_returns_give_one_over_m_plus_one() {
        assert_relative_eq!(rho_from_returns(3.0, &[3.0; 5]), 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn ln_two_against_zero_is_two_thirds() {
        assert_relative_eq!(rho_from_returns(2f64.ln(), &[0.0]), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn huge_returns_match_high_precision_reference() {
        // reference values from mpmath at 200 significant digits
        let cases: [(f64, &[f64], f64); 3] = [
            (10000.0, &[9999.0, 10001.5, 9990.25], 0.170951076561786525561698),
            (-12345.5, &[-12340.0, -12350.75], 0.004070050787252622895818442),
            (20000.0, &[19999.999, 20000.0, 20000.001, -20000.0], 0.2499999375000103911993478),
        ];
        for (e, rs, expected) in cases {
            let got = rho_from_returns(e, rs);
            assert!(((got - expected) / expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn single_action_mdp_has_unique_rollout() {
        let mdp = TabularMdp::deterministic(4, 1, |s, _| (s + 1) % 4, 0.9, vec![(2, 1.0)]).unwrap();
        let demo = sample_trajectory(&mdp, RolloutPolicy::Uniform, 2, 6, 0).unwrap();
        let basis = generate_basis(&[demo.clone()], &mdp, 1, 1, 3).unwrap();
        assert_eq!(basis.entries()[0].rollouts(), &[demo]);
    }

    #[test]
    fn basis_rollouts_share_start_and_length() {
        let (_, basis) = gridworld_basis(1);
        assert_eq!(basis.k(), 10);
        for e in basis.entries() {
            assert_eq!(e.rollouts().len(), 5);
            for r in e.rollouts() {
                assert_eq!(r.start(), e.expert().start());
                assert_eq!(r.len(), e.expert().len());
            }
        }
    }

    #[test]
    fn too_few_demos_is_an_error() {
        let (env, basis) = gridworld_basis(2);
        let demos: Vec<Trajectory> = basis.entries().iter().map(|e| e.expert().clone()).collect();
        assert!(matches!(
            generate_basis(&demos, env.mdp(), 11, 5, 0),
            Err(Error::NotEnoughDemos { requested: 11, available: 10 })
        ));
    }

    #[test]
    fn basis_generation_is_reproducible() {
        assert_eq!(gridworld_basis(5).1, gridworld_basis(5).1);
    }

    #[test]
    fn jsonl_round_trip_preserves_basis() {
        let (_, basis) = gridworld_basis(3);
        let text = basis.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 60);
        assert_eq!(ProjectionBasis::from_jsonl(&text).unwrap(), basis);
    }

    #[test]
    fn projector_matches_table_path() {
        let (env, basis) = gridworld_basis(4);
        let projector = RhoProjector::new(&basis, &env);
        for theta in [[1.25, 5.0, 0.0], [-1.7, -3.0, 2.2], [0.3, 9.0, -4.0]] {
            let params = env.params(theta.to_vec()).unwrap();
            let slow = rho_vector(&params, &basis, &env).unwrap();
            let fast = projector.project(&theta).unwrap();
            for (a, b) in slow.values().iter().zip(fast.values()) {
                assert_relative_eq!(*a, *b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn gridworld_translation_leaves_rho_unchanged() {
        let (env, basis) = gridworld_basis(6);
        let a = rho_vector(&env.params(vec![0.8, 2.0, -1.0]).unwrap(), &basis, &env).unwrap();
        let b = rho_vector(&env.params(vec![0.8, 2.0, 1.0]).unwrap(), &basis, &env).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn shared_end_state_makes_shaping_exact() {
        // one action that always returns to state 0 after a cycle: every
        // same-length rollout ends in the same state as the expert
        let mdp = TabularMdp::from_sparse(
            3,
            2,
            vec![
                vec![(1, 1.0)],
                vec![(2, 1.0)],
                vec![(0, 1.0)],
                vec![(0, 1.0)],
                vec![(0, 0.5), (1, 0.5)],
                vec![(0, 0.5), (2, 0.5)],
            ],
            0.9,
            vec![(0, 1.0)],
        )
        .unwrap();
        let reward = RewardTable::from_fn(3, 2, |s, a, n| 0.4 * s as f64 - 0.7 * a as f64 + n as f64).unwrap();
        let phi = [0.3, -2.0, 1.1];
        let shaped = crate::envs::shape_reward(&reward, &phi, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let expert = rollout(&mdp, RolloutPolicy::Uniform, 0, 3, &mut rng).unwrap();
        let rollouts: Vec<Trajectory> = (0..50)
            .map(|_| rollout(&mdp, RolloutPolicy::Uniform, 0, 3, &mut rng).unwrap())
            .filter(|t| t.terminal() == expert.terminal())
            .collect();
        let entry = BasisEntry::new(expert, rollouts).unwrap();
        let a = rho_with_table(&reward, &entry, 0.9);
        let b = rho_with_table(&shaped, &entry, 0.9);
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn rollout_with_different_start_is_rejected() {
        let a = Trajectory::new(vec![(0, 0)], 1).unwrap();
        let b = Trajectory::new(vec![(1, 0)], 1).unwrap();
        assert!(BasisEntry::new(a, vec![b]).is_err());
    }

    proptest! {
        #[test]
        fn rho_lies_in_open_unit_interval(e in -1e4f64..1e4, rs in prop::collection::vec(-1e4f64..1e4, 1..20)) {
            let r = rho_from_returns(e, &rs);
            prop_assert!(r > 0.0 && r < 1.0);
        }

        #[test]
        fn rho_is_shift_invariant(e in -50f64..50.0, rs in prop::collection::vec(-50f64..50.0, 1..10), c in -1e3f64..1e3) {
            let shifted: Vec<f64> = rs.iter().map(|r| r + c).collect();
            let a = rho_from_returns(e, &rs);
            let b = rho_from_returns(e + c, &shifted);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300) + 1e-15);
        }

        #[test]
        fn rho_increases_with_expert_return(e in -10f64..10.0, d in 0.01f64..5.0, rs in prop::collection::vec(-10f64..10.0, 1..10)) {
            prop_assert!(rho_from_returns(e + d, &rs) > rho_from_returns(e, &rs));
        }
    }
}
