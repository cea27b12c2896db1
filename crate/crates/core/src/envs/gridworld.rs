use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvKind, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::reward::{Bounds, RewardModel};

/// (steepness, midpoint, translation) used to generate expert demonstrations.
pub const GRIDWORLD_GROUND_TRUTH: [f64; 3] = [1.25, 5.0, 0.0];

const STEEPNESS: (f64, f64) = (-2.0, 2.0);
const MIDPOINT: (f64, f64) = (-10.0, 10.0);
const TRANSLATION: (f64, f64) = (-4.0, 4.0);

/// Coin counts per cell, row-major (`index = y * width + x`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridworldLayout {
    pub width: usize,
    pub height: usize,
    pub coins: Vec<u32>,
}

impl GridworldLayout {
    /// Uniform coin counts in `0..=max_coins`.
    pub fn random(width: usize, height: usize, max_coins: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coins = (0..width * height)
            .map(|_| rng.random_range(0..=max_coins))
            .collect();
        Self {
            width,
            height,
            coins,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let layout: Self = serde_json::from_str(&text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidLayout("width and height must be positive".into()));
        }
        if self.coins.len() != self.width * self.height {
            return Err(Error::InvalidLayout(format!(
                "{} coin entries for a {}x{} grid",
                self.coins.len(),
                self.width,
                self.height
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    /// Cell reached by `action` (0 up, 1 right, 2 down, 3 left); walls clamp.
    pub fn step(&self, cell: usize, action: usize) -> usize {
        let (x, y) = (cell % self.width, cell / self.width);
        let (nx, ny) = match action {
            0 => (x, y.saturating_sub(1)),
            1 => ((x + 1).min(self.width - 1), y),
            2 => (x, (y + 1).min(self.height - 1)),
            _ => (x.saturating_sub(1), y),
        };
        ny * self.width + nx
    }
}

impl Default for GridworldLayout {
    fn default() -> Self {
        Self::random(6, 6, 8, 0)
    }
}

/// Coin Gridworld: four deterministic compass moves, uniform start over all
/// cells, and the translated-logistic reward on the coin count of the cell
/// being entered.
pub fn build_gridworld(layout: &GridworldLayout, discount: f64) -> Result<EnvironmentSpec> {
    layout.validate()?;
    let n = layout.n_cells();
    let mdp = TabularMdp::deterministic(
        n,
        4,
        |s, a| layout.step(s, a),
        discount,
        TabularMdp::uniform_start(0..n),
    )?;
    let mut levels: Vec<u32> = layout.coins.clone();
    levels.sort_unstable();
    levels.dedup();
    let features = layout
        .coins
        .iter()
        .map(|c| {
            let idx = levels.binary_search(c).expect("level present");
            let mut f = vec![0.0; levels.len()];
            f[idx] = 1.0;
            f
        })
        .collect();
    EnvironmentSpec::new(
        EnvKind::Gridworld,
        mdp,
        features,
        RewardModel::LogisticState {
            levels: levels.into_iter().map(f64::from).collect(),
        },
        Bounds::from_pairs(&[STEEPNESS, MIDPOINT, TRANSLATION])?,
        Some(GRIDWORLD_GROUND_TRUTH.to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::{eval_reward, state_rewards};
    use approx::assert_relative_eq;

    #[test]
    fn every_action_has_one_successor_and_walls_clamp() {
        let layout = GridworldLayout::default();
        let env = build_gridworld(&layout, 0.9).unwrap();
        let mdp = env.mdp();
        assert_eq!(mdp.n_states(), 36);
        assert_eq!(mdp.n_actions(), 4);
        for s in 0..36 {
            for a in 0..4 {
                assert_eq!(mdp.successors(s, a).len(), 1);
            }
        }
        assert_eq!(layout.step(0, 0), 0);
        assert_eq!(layout.step(0, 3), 0);
        assert_eq!(layout.step(35, 1), 35);
        assert_eq!(layout.step(35, 2), 35);
        assert_eq!(layout.step(0, 1), 1);
        assert_eq!(layout.step(0, 2), 6);
    }

    #[test]
    fn bounds_and_ground_truth() {
        let env = build_gridworld(&GridworldLayout::default(), 0.9).unwrap();
        assert_eq!(env.theta_bounds().lo(), &[-2.0, -10.0, -4.0]);
        assert_eq!(env.theta_bounds().hi(), &[2.0, 10.0, 4.0]);
        assert_eq!(env.ground_truth().unwrap().theta(), &[1.25, 5.0, 0.0]);
    }

    #[test]
    fn cell_at_midpoint_gets_half_scale_plus_translation() {
        let layout = GridworldLayout::default();
        let env = build_gridworld(&layout, 0.9).unwrap();
        let psi = f64::from(layout.coins[7]);
        let params = env.params(vec![1.1, psi, 2.5]).unwrap();
        let r = state_rewards(&params, &env).unwrap();
        assert_relative_eq!(r[7], 5.0 + 2.5, epsilon = 1e-12);
        let table = eval_reward(&params, &env).unwrap();
        assert_relative_eq!(table.get(1, 2, 7), 7.5, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_layout() {
        let layout = GridworldLayout {
            width: 6,
            height: 6,
            coins: vec![1; 35],
        };
        assert!(matches!(build_gridworld(&layout, 0.9), Err(Error::InvalidLayout(_))));
    }

    #[test]
    fn layout_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layout.json");
        let layout = GridworldLayout::random(6, 6, 8, 11);
        layout.save(&path).unwrap();
        assert_eq!(GridworldLayout::load(&path).unwrap(), layout);
    }
}
