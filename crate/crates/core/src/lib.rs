//! Bayesian-optimization inverse reinforcement learning on tabular MDPs.
//!
//! The crate searches a bounded box of reward parameters for minima of the
//! maximum-entropy demonstration negative log-likelihood. The surrogate is a
//! Gaussian process whose ρ-RBF kernel first projects each parameter vector
//! onto the softmax weights of expert trajectories against uniform-policy
//! rollouts, so reward functions that induce the same soft policy land on the
//! same point.
//!
//! Module map:
//!
//! - [`mdp`]: tabular MDPs, soft (Boltzmann) value iteration, trajectory
//!   sampling and the demonstration NLL.
//! - [`reward`]: reward parameters, bounds and reward families.
//! - [`envs`]: the coin Gridworld, the synthetic road network and
//!   potential-based shaping.
//! - [`objective`]: the NLL objective and expert demonstrations.
//! - [`projection`]: the ρ-projection and its frozen trajectory basis.
//! - [`gp`]: exact GP regression with RBF, Matérn 5/2 and ρ-RBF kernels.
//! - [`bo`]: the BO-IRL loop with expected improvement.
//! - [`baselines`]: Metropolis–Hastings Bayesian IRL.
//! - [`eval`]: ESOR metrics, grid scans and the experiment runner.

pub mod baselines;
pub mod bo;
pub mod envs;
pub mod error;
pub mod eval;
pub mod gp;
pub mod io;
pub mod mdp;
pub mod numeric;
pub mod objective;
pub mod projection;
pub mod reward;

pub use error::{Error, Result};
