//! Continuous-action confounded environments. The confounder is drawn at
//! reset and read by the demonstrator, the dynamics and the reward, but an
//! [`Episode`] never exposes it through its observation.

use std::fmt;
use std::sync::Arc;

use super::dataset::{RewardBounds, Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::rng::{self, LabRng};

/// Mechanisms of a continuous CMDP. `state` is the full simulator state,
/// which may be richer than the observation.
pub trait ConfoundedDynamics: Send + Sync + fmt::Debug {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reward_bounds(&self) -> RewardBounds;
    fn sample_confounder(&self, rng: &mut LabRng) -> f64;
    fn initial_state(&self, u: f64, rng: &mut LabRng) -> Vec<f64>;
    fn observe(&self, state: &[f64], t: usize) -> Vec<f64>;
    /// Applies an already clipped action; returns `(next_state, reward)`.
    fn step(&self, state: &[f64], action: &[f64], u: f64, t: usize) -> (Vec<f64>, f64);
    /// Demonstrator action before clipping.
    fn demonstrator(&self, state: &[f64], u: f64, t: usize, rng: &mut LabRng) -> Vec<f64>;
    /// Success predicate on the final state.
    fn success(&self, state: &[f64], u: f64, total_reward: f64) -> bool;
}

#[derive(Debug, Clone)]
pub struct ContinuousCmdpEnv {
    id: String,
    dynamics: Arc<dyn ConfoundedDynamics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub total_reward: f64,
    pub success: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// A running episode. The confounder stays private.
pub struct Episode<'a> {
    dynamics: &'a dyn ConfoundedDynamics,
    state: Vec<f64>,
    u: f64,
    t: usize,
    total_reward: f64,
    rng: LabRng,
}

pub fn clip_action(a: &mut [f64]) {
    a.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
}

impl Episode<'_> {
    pub fn observation(&self) -> Vec<f64> {
        self.dynamics.observe(&self.state, self.t)
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.dynamics.horizon()
    }

    /// Clipped demonstrator action for the current step.
    pub fn demonstrator_action(&mut self) -> Vec<f64> {
        let mut a = self
            .dynamics
            .demonstrator(&self.state, self.u, self.t, &mut self.rng);
        clip_action(&mut a);
        a
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != self.dynamics.action_dim() {
            return Err(Error::Dimension {
                context: "env action".into(),
                expected: self.dynamics.action_dim(),
                found: action.len(),
            });
        }
        if self.is_done() {
            return Err(Error::InvalidArgument("step after episode end".into()));
        }
        let mut a = action.to_vec();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("env action".into()));
        }
        clip_action(&mut a);
        let (next, reward) = self.dynamics.step(&self.state, &a, self.u, self.t);
        self.state = next;
        self.t += 1;
        self.total_reward += reward;
        Ok(StepOutcome {
            reward,
            next_obs: self.observation(),
            done: self.is_done(),
        })
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            total_reward: self.total_reward,
            success: self.dynamics.success(&self.state, self.u, self.total_reward),
            steps: self.t,
        }
    }
}

impl ContinuousCmdpEnv {
    pub fn new(id: &str, dynamics: Arc<dyn ConfoundedDynamics>) -> Self {
        Self {
            id: id.into(),
            dynamics,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn obs_dim(&self) -> usize {
        self.dynamics.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.dynamics.action_dim()
    }

    pub fn horizon(&self) -> usize {
        self.dynamics.horizon()
    }

    pub fn reward_bounds(&self) -> RewardBounds {
        self.dynamics.reward_bounds()
    }

    pub fn dynamics(&self) -> &dyn ConfoundedDynamics {
        self.dynamics.as_ref()
    }

    /// Starts an episode whose env-side randomness (confounder, initial
    /// state, demonstrator jitter) comes from the `(seed, index)` stream.
    pub fn reset(&self, seed: u64, index: u64) -> Episode<'_> {
        let mut rng = rng::stream(seed, index);
        let u = self.dynamics.sample_confounder(&mut rng);
        let state = self.dynamics.initial_state(u, &mut rng);
        Episode {
            dynamics: self.dynamics.as_ref(),
            state,
            u,
            t: 0,
            total_reward: 0.0,
            rng,
        }
    }

    /// Runs one episode with `actor` choosing actions from observations.
    pub fn run_episode(
        &self,
        seed: u64,
        index: u64,
        mut actor: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
    ) -> Result<EpisodeSummary> {
        let mut ep = self.reset(seed, index);
        while !ep.is_done() {
            let obs = ep.observation();
            let a = actor(&obs, ep.time())?;
            ep.step(&a)?;
        }
        Ok(ep.summary())
    }

    /// Runs one episode with the demonstrator, which reads the confounder.
    pub fn run_demonstrator(&self, seed: u64, index: u64) -> Result<EpisodeSummary> {
        let mut ep = self.reset(seed, index);
        while !ep.is_done() {
            let a = ep.demonstrator_action();
            ep.step(&a)?;
        }
        Ok(ep.summary())
    }

    /// Demonstrator rollouts; episode `e` uses stream `(seed, e)`. The final
    /// step of each episode is marked done.
    pub fn sample_trajectories(&self, episodes: usize, seed: u64) -> Result<TransitionDataset> {
        if episodes == 0 {
            return Err(Error::InvalidArgument("need at least one episode".into()));
        }
        let mut data = TransitionDataset::new(
            &self.id,
            seed,
            self.reward_bounds(),
            self.obs_dim(),
            self.action_dim(),
        );
        for e in 0..episodes {
            let mut ep = self.reset(seed, e as u64);
            while !ep.is_done() {
                let obs = ep.observation();
                let a = ep.demonstrator_action();
                let out = ep.step(&a)?;
                data.push(Transition {
                    obs,
                    action: a,
                    reward: out.reward,
                    next_obs: out.next_obs,
                    done: out.done,
                    episode: e as u32,
                })?;
            }
        }
        Ok(data)
    }
}
