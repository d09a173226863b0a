//! Observational quantities `T~(s,x,s')`, `R~(s,x)` and `mu(x|s)`.

use serde::Serialize;

use super::dataset::TransitionDataset;
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

/// Nominal model over a discrete state/action space. Pairs with
/// `mu(x|s) = 0` have no transition row or reward; states never visited have
/// an all-zero `mu` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NominalModel {
    states: usize,
    actions: usize,
    behavior: Vec<f64>,
    transition: Vec<f64>,
    reward: Vec<f64>,
    defined: Vec<bool>,
    counts: Option<Vec<u64>>,
}

impl NominalModel {
    /// `behavior` is `[S*X]`, `transition` is `[S*X*S]`, `reward` and
    /// `defined` are `[S*X]`. Entries of undefined pairs are ignored.
    pub fn from_tables(
        states: usize,
        actions: usize,
        behavior: Vec<f64>,
        mut transition: Vec<f64>,
        mut reward: Vec<f64>,
        defined: Vec<bool>,
        counts: Option<Vec<u64>>,
    ) -> Result<Self> {
        let sx = states * actions;
        if behavior.len() != sx
            || transition.len() != sx * states
            || reward.len() != sx
            || defined.len() != sx
            || counts.as_ref().is_some_and(|c| c.len() != sx)
        {
            return Err(Error::InvalidModel("nominal table sizes disagree".into()));
        }
        for s in 0..states {
            let row = &behavior[s * actions..(s + 1) * actions];
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| p < 0.0) || (total > SUM_TOL && (total - 1.0).abs() > SUM_TOL) {
                return Err(Error::InvalidModel(format!("mu(.|{s}) sums to {total}")));
            }
        }
        for i in 0..sx {
            let row = &mut transition[i * states..(i + 1) * states];
            if defined[i] {
                let total: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > SUM_TOL {
                    return Err(Error::InvalidModel(format!("T~ row {i} sums to {total}")));
                }
            } else {
                row.iter_mut().for_each(|v| *v = f64::NAN);
                reward[i] = f64::NAN;
            }
        }
        Ok(Self {
            states,
            actions,
            behavior,
            transition,
            reward,
            defined,
            counts,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn mu(&self, s: usize, x: usize) -> f64 {
        self.behavior[s * self.actions + x]
    }

    pub fn is_defined(&self, s: usize, x: usize) -> bool {
        self.defined[s * self.actions + x]
    }

    pub fn transition(&self, s: usize, x: usize) -> Option<&[f64]> {
        let i = s * self.actions + x;
        self.defined[i].then(|| &self.transition[i * self.states..(i + 1) * self.states])
    }

    pub fn reward(&self, s: usize, x: usize) -> Option<f64> {
        let i = s * self.actions + x;
        self.defined[i].then_some(self.reward[i])
    }

    /// Visit counts when estimated from data; `None` for analytic models.
    pub fn visits(&self, s: usize, x: usize) -> Option<u64> {
        self.counts.as_ref().map(|c| c[s * self.actions + x])
    }

    /// Returns a copy whose reward table is shifted by `c` on defined pairs.
    pub fn with_reward_shift(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (r, &d) in out.reward.iter_mut().zip(&self.defined) {
            if d {
                *r += c;
            }
        }
        out
    }

    /// Sup-norm distance between transition tables over pairs defined in both.
    pub fn transition_sup_distance(&self, other: &NominalModel) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..self.states {
            for x in 0..self.actions {
                if let (Some(a), Some(b)) = (self.transition(s, x), other.transition(s, x)) {
                    for (p, q) in a.iter().zip(b) {
                        worst = worst.max((p - q).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Maximum-likelihood nominal model from a discrete-encoded dataset
/// (observation and action are single integer-valued columns).
pub fn estimate_nominal(
    data: &TransitionDataset,
    states: usize,
    actions: usize,
) -> Result<NominalModel> {
    if data.is_empty() {
        return Err(Error::Estimation("empty dataset".into()));
    }
    if data.obs_dim() != 1 || data.action_dim() != 1 {
        return Err(Error::Estimation("dataset is not discrete-encoded".into()));
    }
    let as_index = |v: f64, n: usize, what: &str| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < n {
            Ok(v as usize)
        } else {
            Err(Error::Estimation(format!("{what} {v} is not an index below {n}")))
        }
    };
    let sx = states * actions;
    let mut counts = vec![0u64; sx];
    let mut next = vec![0u64; sx * states];
    let mut reward_sum = vec![0.0; sx];
    for i in 0..data.len() {
        let s = as_index(data.obs(i)[0], states, "state")?;
        let x = as_index(data.action(i)[0], actions, "action")?;
        let s2 = as_index(data.next_obs(i)[0], states, "next state")?;
        let k = s * actions + x;
        counts[k] += 1;
        next[k * states + s2] += 1;
        reward_sum[k] += data.reward(i);
    }
    let mut behavior = vec![0.0; sx];
    let mut transition = vec![0.0; sx * states];
    let mut reward = vec![0.0; sx];
    let mut defined = vec![false; sx];
    for s in 0..states {
        let n_s: u64 = counts[s * actions..(s + 1) * actions].iter().sum();
        for x in 0..actions {
            let k = s * actions + x;
            if counts[k] == 0 {
                continue;
            }
            let n = counts[k] as f64;
            behavior[k] = n / n_s as f64;
            defined[k] = true;
            reward[k] = reward_sum[k] / n;
            for s2 in 0..states {
                transition[k * states + s2] = next[k * states + s2] as f64 / n;
            }
        }
    }
    NominalModel::from_tables(states, actions, behavior, transition, reward, defined, Some(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::dataset::{RewardBounds, Transition};

    fn discrete(records: &[(usize, usize, f64, usize)]) -> TransitionDataset {
        let mut d = TransitionDataset::new("t", 0, RewardBounds::new(0.0, 1.0), 1, 1);
        for &(s, x, y, s2) in records {
            d.push(Transition {
                obs: vec![s as f64],
                action: vec![x as f64],
                reward: y,
                next_obs: vec![s2 as f64],
                done: false,
                episode: 0,
            })
            .unwrap();
        }
        d
    }

    #[test]
    fn single_transition() {
        let m = estimate_nominal(&discrete(&[(0, 0, 1.0, 1)]), 2, 2).unwrap();
        assert_eq!(m.transition(0, 0), Some(&[0.0, 1.0][..]));
        assert_eq!(m.reward(0, 0), Some(1.0));
        assert_eq!(m.mu(0, 0), 1.0);
        assert!(!m.is_defined(0, 1));
        assert_eq!(m.mu(1, 0) + m.mu(1, 1), 0.0);
        assert_eq!(m.visits(0, 0), Some(1));
    }

    #[test]
    fn mean_reward() {
        let m = estimate_nominal(&discrete(&[(1, 1, 0.0, 0), (1, 1, 1.0, 0)]), 2, 2).unwrap();
        assert_eq!(m.reward(1, 1), Some(0.5));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let d = TransitionDataset::new("t", 0, RewardBounds::new(0.0, 1.0), 1, 1);
        assert!(matches!(estimate_nominal(&d, 2, 2), Err(Error::Estimation(_))));
    }

    #[test]
    fn non_index_values_are_rejected() {
        assert!(estimate_nominal(&discrete(&[(0, 0, 1.0, 3)]), 2, 2).is_err());
    }
}
