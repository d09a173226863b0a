//! Finite confounded MDPs with deterministic mechanisms driven by a
//! per-step exogenous noise `u ~ P(U)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::{DiscreteSizes, RewardBounds, Transition, TransitionDataset};
use super::nominal::NominalModel;
use crate::error::{Error, Result};
use crate::rng::{self, LabRng};

const PROB_TOL: f64 = 1e-12;

/// Full generative model. Only simulators and oracles should read the
/// mechanisms; learners see [`TransitionDataset`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularCmdp {
    pub states: usize,
    pub actions: usize,
    pub noises: usize,
    /// `P(U)`.
    pub noise_probs: Vec<f64>,
    /// `f_X(s, u)`, indexed `s * noises + u`.
    pub behavior: Vec<usize>,
    /// `f_S(s, x, u)`, indexed `(s * actions + x) * noises + u`.
    pub transition: Vec<usize>,
    /// `f_Y(s, x, u)`, same indexing as `transition`.
    pub reward: Vec<f64>,
    pub reward_bounds: RewardBounds,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

/// Row-stochastic `|S| x |X|` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !(0.0..=1.0 + PROB_TOL).contains(&v)) {
        return Err(Error::InvalidModel(format!("{what} has an entry outside [0, 1]")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL * p.len().max(1) as f64 {
        return Err(Error::InvalidModel(format!("{what} sums to {total}")));
    }
    Ok(())
}

impl TabularPolicy {
    pub fn new(states: usize, actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != states * actions {
            return Err(Error::Dimension {
                context: "policy table".into(),
                expected: states * actions,
                found: probs.len(),
            });
        }
        for s in 0..states {
            check_distribution(&probs[s * actions..(s + 1) * actions], &format!("policy row {s}"))?;
        }
        Ok(Self {
            states,
            actions,
            probs,
        })
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            probs: vec![1.0 / actions as f64; states * actions],
        }
    }

    pub fn deterministic(actions: usize, choice: &[usize]) -> Self {
        let mut probs = vec![0.0; choice.len() * actions];
        for (s, &x) in choice.iter().enumerate() {
            probs[s * actions + x] = 1.0;
        }
        Self {
            states: choice.len(),
            actions,
            probs,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn prob(&self, s: usize, x: usize) -> f64 {
        self.probs[s * self.actions + x]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.actions..(s + 1) * self.actions]
    }

    /// The action with the largest probability in each state, lowest index
    /// on ties. `None` unless every row is a point mass.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        (0..self.states)
            .map(|s| self.row(s).iter().position(|&p| p == 1.0))
            .collect()
    }
}

impl TabularCmdp {
    pub fn validate(&self) -> Result<()> {
        let (ns, nx, nu) = (self.states, self.actions, self.noises);
        if ns == 0 || nx == 0 || nu == 0 {
            return Err(Error::InvalidModel("state, action and noise counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidModel(format!("discount {} not in [0, 1)", self.gamma)));
        }
        if self.noise_probs.len() != nu
            || self.behavior.len() != ns * nu
            || self.transition.len() != ns * nx * nu
            || self.reward.len() != ns * nx * nu
            || self.initial.len() != ns
        {
            return Err(Error::InvalidModel("mechanism table sizes disagree with counts".into()));
        }
        check_distribution(&self.noise_probs, "P(U)")?;
        check_distribution(&self.initial, "initial distribution")?;
        if self.behavior.iter().any(|&x| x >= nx) {
            return Err(Error::InvalidModel("behavior mechanism outputs an unknown action".into()));
        }
        if self.transition.iter().any(|&s| s >= ns) {
            return Err(Error::InvalidModel("transition mechanism outputs an unknown state".into()));
        }
        let RewardBounds { low, high } = self.reward_bounds;
        if !(low <= high) || self.reward.iter().any(|&y| !(low..=high).contains(&y)) {
            return Err(Error::InvalidModel(format!("rewards must lie in [{low}, {high}]")));
        }
        Ok(())
    }

    fn idx(&self, s: usize, x: usize, u: usize) -> usize {
        (s * self.actions + x) * self.noises + u
    }

    pub fn f_x(&self, s: usize, u: usize) -> usize {
        self.behavior[s * self.noises + u]
    }

    pub fn f_s(&self, s: usize, x: usize, u: usize) -> usize {
        self.transition[self.idx(s, x, u)]
    }

    pub fn f_y(&self, s: usize, x: usize, u: usize) -> f64 {
        self.reward[self.idx(s, x, u)]
    }

    /// Interventional `T(s' | s, do(x))`.
    pub fn interventional_transition(&self, s: usize, x: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.states];
        for u in 0..self.noises {
            row[self.f_s(s, x, u)] += self.noise_probs[u];
        }
        row
    }

    /// Interventional `R(s, do(x))`.
    pub fn interventional_reward(&self, s: usize, x: usize) -> f64 {
        (0..self.noises)
            .map(|u| self.noise_probs[u] * self.f_y(s, x, u))
            .sum()
    }

    /// Observational `mu(x|s) = sum_u P(u) 1{f_X(s,u) = x}`.
    pub fn behavior_marginal(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.states * self.actions];
        for s in 0..self.states {
            for u in 0..self.noises {
                mu[s * self.actions + self.f_x(s, u)] += self.noise_probs[u];
            }
        }
        mu
    }

    /// The nominal model obtained by exact marginalization over `U`, i.e. the
    /// infinite-data limit of [`super::estimate_nominal`].
    pub fn analytic_nominal(&self) -> NominalModel {
        let (ns, nx) = (self.states, self.actions);
        let mu = self.behavior_marginal();
        let mut t = vec![0.0; ns * nx * ns];
        let mut r = vec![0.0; ns * nx];
        let mut defined = vec![false; ns * nx];
        for s in 0..ns {
            for u in 0..self.noises {
                let x = self.f_x(s, u);
                let p = self.noise_probs[u];
                t[(s * nx + x) * ns + self.f_s(s, x, u)] += p;
                r[s * nx + x] += p * self.f_y(s, x, u);
            }
            for x in 0..nx {
                let m = mu[s * nx + x];
                if m > 0.0 {
                    defined[s * nx + x] = true;
                    r[s * nx + x] /= m;
                    t[(s * nx + x) * ns..(s * nx + x + 1) * ns]
                        .iter_mut()
                        .for_each(|v| *v /= m);
                }
            }
        }
        NominalModel::from_tables(ns, nx, mu, t, r, defined, None)
            .expect("marginals of a valid model are consistent")
    }

    /// Exact `V_pi` under `do(pi)`, from the linear system
    /// `(I - gamma P_pi) V = r_pi`.
    pub fn true_policy_value(&self, policy: &TabularPolicy) -> Result<Vec<f64>> {
        if policy.states() != self.states || policy.actions() != self.actions {
            return Err(Error::Dimension {
                context: "policy for true value".into(),
                expected: self.states * self.actions,
                found: policy.states() * policy.actions(),
            });
        }
        let n = self.states;
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for s in 0..n {
            for x in 0..self.actions {
                let p = policy.prob(s, x);
                if p == 0.0 {
                    continue;
                }
                b[s] += p * self.interventional_reward(s, x);
                for (s2, t) in self.interventional_transition(s, x).into_iter().enumerate() {
                    a[(s, s2)] -= self.gamma * p * t;
                }
            }
        }
        let v = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular("policy evaluation system".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// Observational rollouts: each step draws `u`, then `x = f_X(s,u)`,
    /// `y = f_Y(s,x,u)`, `s' = f_S(s,x,u)`. Episode `e` uses its own stream
    /// derived from `(seed, e)`. Tabular instances never terminate, so no
    /// record is marked done.
    pub fn sample_trajectories(
        &self,
        episodes: usize,
        steps_per_episode: usize,
        seed: u64,
        env_id: &str,
    ) -> Result<TransitionDataset> {
        if episodes == 0 || steps_per_episode == 0 {
            return Err(Error::InvalidArgument("need at least one episode and one step".into()));
        }
        self.validate()?;
        let mut data = TransitionDataset::new(env_id, seed, self.reward_bounds, 1, 1).with_discrete(
            DiscreteSizes {
                states: self.states,
                actions: self.actions,
            },
        );
        for e in 0..episodes {
            let mut rng: LabRng = rng::stream(seed, e as u64);
            let mut s = rng::categorical(&self.initial, &mut rng);
            for _ in 0..steps_per_episode {
                let u = rng::categorical(&self.noise_probs, &mut rng);
                let x = self.f_x(s, u);
                let y = self.f_y(s, x, u);
                let s2 = self.f_s(s, x, u);
                data.push(Transition {
                    obs: vec![s as f64],
                    action: vec![x as f64],
                    reward: y,
                    next_obs: vec![s2 as f64],
                    done: false,
                    episode: e as u32,
                })?;
                s = s2;
            }
        }
        Ok(data)
    }
}
