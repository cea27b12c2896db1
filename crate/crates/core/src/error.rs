use thiserror::Error;

use crate::reward::RewardFamily;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("reward family mismatch: parameters are {params}, environment expects {env}")]
    FamilyMismatch {
        params: RewardFamily,
        env: RewardFamily,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("theta[{index}] = {value} lies outside [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("reward evaluation produced a non-finite value")]
    NonFiniteReward,

    #[error("soft value iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("non-finite value during soft value iteration at iteration {iteration}")]
    NumericBlowup { iteration: usize },

    #[error("impossible demonstration {trajectory} at step {step}: {reason}")]
    ImpossibleDemonstration {
        trajectory: usize,
        step: usize,
        reason: String,
    },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid gridworld layout: {0}")]
    InvalidLayout(String),

    #[error("invalid road network: {0}")]
    InvalidRoadNetwork(String),

    #[error("requested {requested} basis trajectories but only {available} demonstrations exist")]
    NotEnoughDemos { requested: usize, available: usize },

    #[error("Cholesky factorization failed even with jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("environment has no ground-truth reward")]
    MissingGroundTruth,

    #[error("run aborted after {completed} evaluations: {source}")]
    Aborted {
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
