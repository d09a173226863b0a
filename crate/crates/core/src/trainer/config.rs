//! Training configuration.

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorCoef;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Robust policy objective with a trained discriminator.
    Cfql,
    /// Factual weight fixed at 1, no discriminator.
    Fql,
    /// Flow behavioral cloning only.
    Bc,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cfql" => Ok(Mode::Cfql),
            "fql" => Ok(Mode::Fql),
            "bc" => Ok(Mode::Bc),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Cfql => "cfql",
            Mode::Fql => "fql",
            Mode::Bc => "bc",
        })
    }
}

/// Objective used once self-collected data arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnlineObjective {
    /// FQL objective on batches drawn uniformly from both buffers.
    Fql,
    /// Half-batches from each buffer; robust objective on the offline
    /// half, FQL objective on the online half.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Environment steps, one gradient update each.
    pub steps: usize,
    pub objective: OnlineObjective,
    /// Evaluate every this many online steps; 0 disables.
    pub eval_every: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            steps: 0,
            objective: OnlineObjective::Fql,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub critic: f64,
    pub flow: f64,
    pub discriminator: f64,
    pub policy: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            critic: 3e-4,
            flow: 3e-4,
            discriminator: 3e-4,
            policy: 3e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub critic_hidden: Vec<usize>,
    pub flow_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            critic_hidden: vec![64, 64],
            flow_hidden: vec![64, 64],
            policy_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub gamma: f64,
    /// Distillation coefficient.
    pub alpha: f64,
    pub discriminator: DiscriminatorCoef,
    pub ensemble_size: usize,
    pub euler_steps: usize,
    pub batch_size: usize,
    pub steps: usize,
    /// Polyak rate of the critic targets.
    pub tau: f64,
    /// Divide the Q term of the policy loss by the batch mean of `|Q|`
    /// (held constant), which makes `alpha` insensitive to reward scale.
    pub normalize_q_loss: bool,
    /// Replace the discriminator by this constant factual weight and skip
    /// its updates. Only meaningful in `cfql` mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinned_factual_weight: Option<f64>,
    pub lr: LearningRates,
    pub network: NetworkConfig,
    /// Record training losses every this many steps.
    pub log_every: usize,
    /// Evaluate every this many offline steps; 0 disables.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Verify parameter isolation of every update block.
    pub check_isolation: bool,
    pub online: OnlineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Cfql,
            seed: 0,
            gamma: 0.99,
            alpha: 10.0,
            discriminator: DiscriminatorCoef {
                coef: 1.0,
                decay: 0.0,
            },
            ensemble_size: 2,
            euler_steps: 10,
            batch_size: 256,
            steps: 1000,
            tau: 0.005,
            normalize_q_loss: true,
            pinned_factual_weight: None,
            lr: LearningRates::default(),
            network: NetworkConfig::default(),
            log_every: 10,
            eval_every: 0,
            eval_episodes: 50,
            check_isolation: false,
            online: OnlineConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.ensemble_size < 2 {
            return bad("ensemble_size must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.discriminator.coef >= 0.0 && self.discriminator.decay >= 0.0) {
            return bad("discriminator coefficient and decay must be non-negative");
        }
        if let Some(w) = self.pinned_factual_weight {
            if !(0.0..=1.0).contains(&w) {
                return bad("pinned_factual_weight must lie in [0, 1]");
            }
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        let lr = &self.lr;
        if [lr.critic, lr.flow, lr.discriminator, lr.policy]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return bad("learning rates must be positive");
        }
        self.flow(1).validate()
    }

    pub fn flow(&self, action_dim: usize) -> FlowConfig {
        FlowConfig {
            euler_steps: self.euler_steps,
            action_dim,
            alpha: self.alpha,
        }
    }

    /// Whether the discriminator is trained and used.
    pub fn uses_discriminator(&self) -> bool {
        self.mode == Mode::Cfql && self.pinned_factual_weight.is_none()
    }
}
