//! Benchmark instances and their registry.

mod bandit;
mod chain;
mod random_cmdp;
mod reacher;

use std::sync::Arc;

use serde::Serialize;

pub use bandit::ConfoundedBandit;
pub use chain::confounded_chain;
pub use random_cmdp::random_cmdp;
pub use reacher::TwoGoalReacher;

use crate::cmdp::{ContinuousCmdpEnv, RewardBounds, TabularCmdp};
use crate::error::{Error, Result};

pub const BANDIT_ID: &str = "confounded-bandit-v0";
pub const REACHER_ID: &str = "two-goal-reacher-v0";
pub const CHAIN_ID: &str = "tabular-confounded-chain-v0";

#[derive(Debug, Clone, Serialize)]
pub struct EnvSpec {
    pub id: &'static str,
    pub tabular: bool,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub reward_bounds: RewardBounds,
    pub confounder: &'static str,
    pub expert: &'static str,
    pub success: &'static str,
    pub default_episodes: usize,
    /// The demonstrator's success rate is at least this.
    pub expert_success_min: f64,
    /// Uniformly random actions succeed less often than this.
    pub random_success_max: f64,
}

#[derive(Debug, Clone)]
pub enum Env {
    Tabular(TabularCmdp),
    Continuous(ContinuousCmdpEnv),
}

impl Env {
    pub fn as_continuous(&self) -> Result<&ContinuousCmdpEnv> {
        match self {
            Env::Continuous(e) => Ok(e),
            Env::Tabular(_) => Err(Error::InvalidArgument("environment is tabular".into())),
        }
    }

    pub fn as_tabular(&self) -> Result<&TabularCmdp> {
        match self {
            Env::Tabular(m) => Ok(m),
            Env::Continuous(_) => Err(Error::InvalidArgument("environment is continuous".into())),
        }
    }
}

pub fn registry() -> Vec<EnvSpec> {
    vec![
        EnvSpec {
            id: BANDIT_ID,
            tabular: false,
            obs_dim: 1,
            action_dim: 1,
            horizon: 1,
            reward_bounds: RewardBounds::new(0.0, 1.0),
            confounder: "u in {-1,+1}, P(u=+1)=0.8; the arm with sign u pays more",
            expert: "plays 0.8 u plus N(0, 0.1^2) jitter",
            success: "reward >= 0.5",
            default_episodes: 2000,
            expert_success_min: 0.95,
            random_success_max: 0.3,
        },
        EnvSpec {
            id: REACHER_ID,
            tabular: false,
            obs_dim: 3,
            action_dim: 2,
            horizon: 10,
            reward_bounds: RewardBounds::new(0.0, 1.0),
            confounder: "u in {-1,+1}, P(u=+1)=0.75; selects the goal (0.7u, 0)",
            expert: "steers toward goal(u) with N(0, 0.1^2) action jitter",
            success: "final distance to goal(u) < 0.15",
            default_episodes: 500,
            expert_success_min: 0.95,
            random_success_max: 0.1,
        },
        EnvSpec {
            id: CHAIN_ID,
            tabular: true,
            obs_dim: 1,
            action_dim: 1,
            horizon: 10,
            reward_bounds: RewardBounds::new(0.0, 1.0),
            confounder: "u in {0,1} uniform; behavior plays x = u",
            expert: "behavior policy x = u, which always moves right",
            success: "reaches the last state within the horizon",
            default_episodes: 1000,
            expert_success_min: 0.95,
            random_success_max: 0.8,
        },
    ]
}

pub fn spec(id: &str) -> Result<EnvSpec> {
    registry()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::UnknownEnv(id.into()))
}

/// The registered instance for `id`. Shipped instances are fixed, so the
/// seed only matters for generated ones; equal arguments give equal values.
pub fn make_env(id: &str, _seed: u64) -> Result<Env> {
    match id {
        BANDIT_ID => Ok(Env::Continuous(ContinuousCmdpEnv::new(
            BANDIT_ID,
            Arc::new(ConfoundedBandit::default()),
        ))),
        REACHER_ID => Ok(Env::Continuous(ContinuousCmdpEnv::new(
            REACHER_ID,
            Arc::new(TwoGoalReacher::default()),
        ))),
        CHAIN_ID => Ok(Env::Tabular(confounded_chain())),
        other => Err(Error::UnknownEnv(other.into())),
    }
}
