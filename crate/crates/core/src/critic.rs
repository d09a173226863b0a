//! Q ensembles with Polyak targets and the confounding-robust combination.

use rand::Rng;

use crate::cmdp::Batch;
use crate::error::{Error, Result};
use crate::flow::OneStepPolicy;
use crate::nn::{Activation, Gradients, Mlp, MlpSpec, OutputActivation};
use crate::rng;
use crate::tensor::Tensor;

/// Init range multiplier of every member's last layer.
pub const CRITIC_FINAL_SCALE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticEnsemble {
    members: Vec<Mlp>,
    targets: Vec<Mlp>,
    obs_dim: usize,
    action_dim: usize,
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub losses: Vec<f64>,
    pub grads: Vec<Gradients>,
    /// The regression targets, shared by every member.
    pub targets: Vec<f64>,
}

/// Q values of every member plus their action gradients.
#[derive(Debug, Clone)]
pub struct QWithActionGrad {
    /// `values[i][b]`.
    pub values: Vec<Vec<f64>>,
    /// `d Q_i / d x`, each `[B, d]`.
    pub action_grads: Vec<Tensor>,
}

fn column(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

impl CriticEnsemble {
    pub fn new(
        n: usize,
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("an ensemble needs at least two members".into()));
        }
        let mut sizes = vec![obs_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, Activation::Relu, OutputActivation::Identity)
            .with_final_layer_scale(CRITIC_FINAL_SCALE);
        let members = (0..n)
            .map(|_| Mlp::new(spec.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            targets: members.clone(),
            members,
            obs_dim,
            action_dim,
        })
    }

    pub fn from_parts(members: Vec<Mlp>, targets: Vec<Mlp>, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if members.len() < 2 || members.len() != targets.len() {
            return Err(Error::InvalidArgument("need at least two members with matching targets".into()));
        }
        for (m, t) in members.iter().zip(&targets) {
            if m.spec() != t.spec()
                || m.spec().input_dim() != obs_dim + action_dim
                || m.spec().output_dim() != 1
            {
                return Err(Error::Shape("critic member shapes disagree".into()));
            }
        }
        Ok(Self {
            members,
            targets,
            obs_dim,
            action_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.members
    }

    pub fn targets(&self) -> &[Mlp] {
        &self.targets
    }

    pub fn targets_mut(&mut self) -> &mut [Mlp] {
        &mut self.targets
    }

    fn input(&self, obs: &Tensor, actions: &Tensor) -> Result<Tensor> {
        if obs.cols() != self.obs_dim || actions.cols() != self.action_dim || obs.rows() != actions.rows() {
            return Err(Error::Dimension {
                context: "critic input".into(),
                expected: self.obs_dim + self.action_dim,
                found: obs.cols() + actions.cols(),
            });
        }
        Tensor::hcat(&[obs, actions])
    }

    /// Online Q values, `values[i][b]`.
    pub fn q_values(&self, obs: &Tensor, actions: &Tensor) -> Result<Vec<Vec<f64>>> {
        let x = self.input(obs, actions)?;
        self.members.iter().map(|m| Ok(column(&m.forward(&x)?))).collect()
    }

    /// Mean over target networks.
    pub fn target_mean(&self, obs: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let x = self.input(obs, actions)?;
        let mut mean = vec![0.0; obs.rows()];
        for t in &self.targets {
            for (m, q) in mean.iter_mut().zip(t.forward(&x)?.data()) {
                *m += q;
            }
        }
        let n = self.targets.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Squared TD error of every member against
    /// `y + gamma (1 - done) mean_i Qtarget_i(s', x')`.
    pub fn critic_loss_with_next_actions(
        &self,
        batch: &Batch,
        next_actions: &Tensor,
        gamma: f64,
    ) -> Result<CriticLoss> {
        let bootstrap = self.target_mean(&batch.next_obs, next_actions)?;
        let targets: Vec<f64> = (0..batch.len())
            .map(|i| batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * bootstrap[i])
            .collect();
        let x = self.input(&batch.obs, &batch.actions)?;
        let b = batch.len() as f64;
        let mut losses = Vec::with_capacity(self.len());
        let mut grads = Vec::with_capacity(self.len());
        for m in &self.members {
            let (q, cache) = m.forward_cached(&x)?;
            let mut up = q.clone();
            let mut loss = 0.0;
            for (u, y) in up.data_mut().iter_mut().zip(&targets) {
                let diff = *u - y;
                loss += diff * diff;
                *u = 2.0 * diff / b;
            }
            losses.push(loss / b);
            grads.push(m.backward_cached(&cache, &up)?.params);
        }
        Ok(CriticLoss {
            losses,
            grads,
            targets,
        })
    }

    /// Critic loss with `x' = pi(s', z)` for fresh `z ~ N(0, I)`.
    pub fn critic_loss(
        &self,
        batch: &Batch,
        pi: &OneStepPolicy,
        gamma: f64,
        rng: &mut impl Rng,
    ) -> Result<CriticLoss> {
        let z = rng::standard_normal(&[batch.len(), self.action_dim], rng);
        let next = pi.act(&batch.next_obs, &z)?;
        self.critic_loss_with_next_actions(batch, &next, gamma)
    }

    pub fn q_with_action_grad(&self, obs: &Tensor, actions: &Tensor) -> Result<QWithActionGrad> {
        let x = self.input(obs, actions)?;
        let ones = Tensor::filled(&[obs.rows(), 1], 1.0);
        let mut values = Vec::with_capacity(self.len());
        let mut action_grads = Vec::with_capacity(self.len());
        for m in &self.members {
            let (q, cache) = m.forward_cached(&x)?;
            let back = m.backward_cached(&cache, &ones)?;
            values.push(column(&q));
            action_grads.push(back.input.columns(self.obs_dim, self.action_dim));
        }
        Ok(QWithActionGrad {
            values,
            action_grads,
        })
    }

    /// `target <- (1 - tau) target + tau online`.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("Polyak rate {tau} not in (0, 1]")));
        }
        for (t, m) in self.targets.iter_mut().zip(&self.members) {
            for (tp, mp) in t.params_mut().iter_mut().zip(m.params()) {
                for (a, b) in tp.data_mut().iter_mut().zip(mp.data()) {
                    *a = if tau == 1.0 { *b } else { (1.0 - tau) * *a + tau * b };
                }
            }
        }
        Ok(())
    }
}

/// `D mean_i Q_i + (1 - D) min_i Q_i` for one input.
pub fn robust_q_scalar(q: &[f64], d: f64) -> f64 {
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    let min = q.iter().copied().fold(f64::INFINITY, f64::min);
    d * mean + (1.0 - d) * min
}

/// Row-wise robust combination; `values[i][b]`, `weights[b]`.
pub fn robust_q(values: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let mut q = vec![0.0; values.len()];
    (0..weights.len())
        .map(|b| {
            for (qi, v) in q.iter_mut().zip(values) {
                *qi = v[b];
            }
            robust_q_scalar(&q, weights[b])
        })
        .collect()
}
