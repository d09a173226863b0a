//! One-step bandit whose hidden sign decides which arm region pays.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cmdp::{ConfoundedDynamics, RewardBounds, TabularCmdp};
use crate::rng::LabRng;

/// Actions in `[-1, 1]`; the sign picks the arm and the reward is scaled
/// by a bump centred at `|x| = 0.8`. The demonstrator plays
/// `0.8 u + N(0, jitter^2)`, so each arm is only ever observed under the
/// confounder value that favours it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedBandit {
    /// `P(u = +1)`.
    pub p_positive: f64,
    /// `payoff[arm][u]` with arm 0 = negative, 1 = positive and u index
    /// 0 = `-1`, 1 = `+1`.
    pub payoff: [[f64; 2]; 2],
    pub jitter: f64,
    pub bump_center: f64,
    pub bump_width: f64,
    pub success_threshold: f64,
}

impl Default for ConfoundedBandit {
    fn default() -> Self {
        Self {
            p_positive: 0.8,
            payoff: [[1.0, 0.0], [0.2, 0.7]],
            jitter: 0.1,
            bump_center: 0.8,
            bump_width: 0.4,
            success_threshold: 0.5,
        }
    }
}

impl ConfoundedBandit {
    /// Equal-mass symmetric variant: both arms pay 1 under their own sign.
    /// Its demonstrator action distribution is the bimodal benchmark with
    /// modes at `+-0.8`.
    pub fn symmetric() -> Self {
        Self {
            p_positive: 0.5,
            payoff: [[1.0, 0.0], [0.0, 1.0]],
            ..Self::default()
        }
    }

    pub fn bump(&self, x: f64) -> f64 {
        let r = (x.abs() - self.bump_center) / self.bump_width;
        (1.0 - r * r).max(0.0)
    }

    fn arm(x: f64) -> usize {
        usize::from(x >= 0.0)
    }

    pub fn reward(&self, x: f64, u: f64) -> f64 {
        self.payoff[Self::arm(x)][usize::from(u > 0.0)] * self.bump(x)
    }

    /// Interventional expected reward of playing `x`.
    pub fn expected_reward(&self, x: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        (1.0 - self.p_positive) * self.reward(x, -1.0) + self.p_positive * self.reward(x, 1.0)
    }

    /// Observational mean reward at `x`: only the matching sign is ever seen.
    pub fn nominal_reward(&self, x: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        self.reward(x, if x >= 0.0 { 1.0 } else { -1.0 })
    }

    /// Two-arm discretization at `x = -+0.8`: one state, actions
    /// (negative, positive), noises (`u = -1`, `u = +1`), `gamma = 0`.
    pub fn discretize(&self) -> TabularCmdp {
        TabularCmdp {
            states: 1,
            actions: 2,
            noises: 2,
            noise_probs: vec![1.0 - self.p_positive, self.p_positive],
            behavior: vec![0, 1],
            transition: vec![0; 4],
            reward: vec![
                self.payoff[0][0],
                self.payoff[0][1],
                self.payoff[1][0],
                self.payoff[1][1],
            ],
            reward_bounds: RewardBounds::new(0.0, 1.0),
            initial: vec![1.0],
            gamma: 0.0,
        }
    }
}

impl ConfoundedDynamics for ConfoundedBandit {
    fn obs_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        1
    }
    fn reward_bounds(&self) -> RewardBounds {
        RewardBounds::new(0.0, 1.0)
    }
    fn sample_confounder(&self, rng: &mut LabRng) -> f64 {
        if rng.random::<f64>() < self.p_positive {
            1.0
        } else {
            -1.0
        }
    }
    fn initial_state(&self, _u: f64, _rng: &mut LabRng) -> Vec<f64> {
        vec![0.0]
    }
    fn observe(&self, _state: &[f64], _t: usize) -> Vec<f64> {
        vec![0.0]
    }
    fn step(&self, _state: &[f64], action: &[f64], u: f64, _t: usize) -> (Vec<f64>, f64) {
        (vec![self.reward(action[0], u)], self.reward(action[0], u))
    }
    fn demonstrator(&self, _state: &[f64], u: f64, _t: usize, rng: &mut LabRng) -> Vec<f64> {
        let eps: f64 = rng.sample(StandardNormal);
        vec![self.bump_center * u + self.jitter * eps]
    }
    fn success(&self, _state: &[f64], _u: f64, total_reward: f64) -> bool {
        total_reward >= self.success_threshold
    }
}
