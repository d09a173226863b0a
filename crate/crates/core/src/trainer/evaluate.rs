//! Frozen-parameter rollouts.

use super::bundle::NetworkBundle;
use super::config::Mode;
use super::metrics::EvalResult;
use crate::cmdp::{ContinuousCmdpEnv, EpisodeSummary};
use crate::error::{Error, Result};
use crate::flow::euler_sample;
use crate::rng;
use crate::tensor::Tensor;

/// Env stream offset of evaluation episodes, clear of dataset episodes.
pub const EVAL_EPISODE_BASE: u64 = 1 << 40;
/// Stream offset of the per-episode actor noise.
pub const EVAL_NOISE_BASE: u64 = 1 << 41;

/// Which network acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    /// One-step policy `pi(s, z)`.
    OneStep,
    /// Euler-sampled BC flow `mu(s, z)`.
    Flow { euler_steps: usize },
}

impl Actor {
    pub fn for_mode(mode: Mode, euler_steps: usize) -> Self {
        match mode {
            Mode::Bc => Actor::Flow { euler_steps },
            Mode::Cfql | Mode::Fql => Actor::OneStep,
        }
    }

    /// Actions for a batch of observations under noise `z`.
    pub fn act(&self, bundle: &NetworkBundle, obs: &Tensor, z: &Tensor) -> Result<Tensor> {
        match *self {
            Actor::OneStep => bundle.policy.act(obs, z),
            Actor::Flow { euler_steps } => euler_sample(&bundle.velocity, obs, z, euler_steps),
        }
    }

    /// The action at noise `z = 0`.
    pub fn mode_action(&self, bundle: &NetworkBundle, obs: &[f64]) -> Result<Vec<f64>> {
        let o = Tensor::from_vec(&[1, obs.len()], obs.to_vec())?;
        let z = Tensor::zeros(&[1, bundle.action_dim]);
        Ok(self.act(bundle, &o, &z)?.into_data())
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One evaluation episode: env stream `(seed, EVAL_EPISODE_BASE + index)`,
/// fresh `z ~ N(0, I)` per step from `(seed, EVAL_NOISE_BASE + index)`.
pub fn run_eval_episode(
    bundle: &NetworkBundle,
    actor: Actor,
    env: &ContinuousCmdpEnv,
    seed: u64,
    index: u64,
) -> Result<EpisodeSummary> {
    let mut noise = rng::stream(seed, EVAL_NOISE_BASE + index);
    env.run_episode(seed, EVAL_EPISODE_BASE + index, |obs, _t| {
        let o = Tensor::from_vec(&[1, obs.len()], obs.to_vec())?;
        let z = rng::standard_normal(&[1, bundle.action_dim], &mut noise);
        Ok(actor.act(bundle, &o, &z)?.into_data())
    })
}

pub fn evaluate(
    bundle: &NetworkBundle,
    actor: Actor,
    env: &ContinuousCmdpEnv,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    if env.obs_dim() != bundle.obs_dim || env.action_dim() != bundle.action_dim {
        return Err(Error::Dimension {
            context: format!("env {} against bundle", env.id()),
            expected: bundle.obs_dim + bundle.action_dim,
            found: env.obs_dim() + env.action_dim(),
        });
    }
    let mut successes = Vec::with_capacity(episodes);
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let s = run_eval_episode(bundle, actor, env, seed, i as u64)?;
        successes.push(if s.success { 1.0 } else { 0.0 });
        returns.push(s.total_reward);
    }
    let (success_rate, success_se) = mean_se(&successes);
    let (mean_return, return_se) = mean_se(&returns);
    Ok(EvalResult {
        episodes,
        success_rate,
        success_se,
        mean_return,
        return_se,
    })
}
