//! Planar point mass with two candidate goals; the hidden confounder picks
//! the goal the demonstrator heads for and the one that pays.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cmdp::{ConfoundedDynamics, RewardBounds};
use crate::rng::LabRng;

/// State `(px, py)`; observation `(px, py, t / horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoGoalReacher {
    /// `P(u = +1)`, where `u = +1` selects the right goal.
    pub p_right: f64,
    pub goal_x: f64,
    /// Per-step reward inside the goal radius, `[left, right]`.
    pub goal_reward: [f64; 2],
    pub radius: f64,
    pub step_size: f64,
    pub horizon: usize,
    pub jitter: f64,
    pub start_noise: f64,
}

impl Default for TwoGoalReacher {
    fn default() -> Self {
        Self {
            p_right: 0.75,
            goal_x: 0.7,
            goal_reward: [1.0, 0.6],
            radius: 0.15,
            step_size: 0.15,
            horizon: 10,
            jitter: 0.1,
            start_noise: 0.05,
        }
    }
}

impl TwoGoalReacher {
    pub fn goal(&self, u: f64) -> [f64; 2] {
        [self.goal_x * u.signum(), 0.0]
    }

    fn distance(&self, state: &[f64], u: f64) -> f64 {
        let g = self.goal(u);
        ((state[0] - g[0]).powi(2) + (state[1] - g[1]).powi(2)).sqrt()
    }
}

impl ConfoundedDynamics for TwoGoalReacher {
    fn obs_dim(&self) -> usize {
        3
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn reward_bounds(&self) -> RewardBounds {
        RewardBounds::new(0.0, 1.0)
    }
    fn sample_confounder(&self, rng: &mut LabRng) -> f64 {
        if rng.random::<f64>() < self.p_right {
            1.0
        } else {
            -1.0
        }
    }
    fn initial_state(&self, _u: f64, rng: &mut LabRng) -> Vec<f64> {
        (0..2)
            .map(|_| self.start_noise * (2.0 * rng.random::<f64>() - 1.0))
            .collect()
    }
    fn observe(&self, state: &[f64], t: usize) -> Vec<f64> {
        vec![state[0], state[1], t as f64 / self.horizon as f64]
    }
    fn step(&self, state: &[f64], action: &[f64], u: f64, _t: usize) -> (Vec<f64>, f64) {
        let next = vec![
            (state[0] + self.step_size * action[0]).clamp(-1.0, 1.0),
            (state[1] + self.step_size * action[1]).clamp(-1.0, 1.0),
        ];
        let inside = self.distance(&next, u) < self.radius;
        let reward = if inside {
            self.goal_reward[usize::from(u > 0.0)]
        } else {
            0.0
        };
        (next, reward)
    }
    fn demonstrator(&self, state: &[f64], u: f64, _t: usize, rng: &mut LabRng) -> Vec<f64> {
        let g = self.goal(u);
        (0..2)
            .map(|k| {
                let eps: f64 = rng.sample(StandardNormal);
                ((g[k] - state[k]) / self.step_size).clamp(-1.0, 1.0) + self.jitter * eps
            })
            .collect()
    }
    fn success(&self, state: &[f64], u: f64, _total_reward: f64) -> bool {
        self.distance(state, u) < self.radius
    }
}
