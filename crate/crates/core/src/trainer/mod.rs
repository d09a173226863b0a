//! Joint training of critics, BC flow, discriminator and one-step policy.

mod bundle;
mod config;
mod evaluate;
mod metrics;
mod train;

pub use bundle::{NetworkBundle, Optimizers};
pub use config::{LearningRates, Mode, NetworkConfig, OnlineConfig, OnlineObjective, TrainConfig};
pub use evaluate::{evaluate, mean_se, run_eval_episode, Actor, EVAL_EPISODE_BASE, EVAL_NOISE_BASE};
pub use metrics::{EvalResult, EvalRow, RunMetrics, StepMetrics};
pub use train::{
    continue_offline, policy_update_grads, train_offline, train_online, PolicyStep, ONLINE_EPISODE_BASE,
};
