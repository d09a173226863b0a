//! Classifier of BC-flow actions (class 1) against one-step policy actions
//! (class 0). Its probability replaces the action-agreement indicator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{euler_sample, OneStepPolicy, VelocityField};
use crate::nn::{sigmoid, Activation, Gradients, Mlp, MlpSpec, OutputActivation};
use crate::rng;
use crate::tensor::Tensor;

/// Loss coefficient `lambda_D`, optionally decayed as
/// `lambda_D * exp(-decay * step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorCoef {
    pub coef: f64,
    #[serde(default)]
    pub decay: f64,
}

impl DiscriminatorCoef {
    pub fn at_step(&self, step: usize) -> f64 {
        if self.decay == 0.0 {
            self.coef
        } else {
            self.coef * (-self.decay * step as f64).exp()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    net: Mlp,
    obs_dim: usize,
    action_dim: usize,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLoss {
    /// Unscaled binary cross-entropy, summed over the two classes and
    /// averaged over the batch.
    pub loss: f64,
    /// Gradients of `coef * loss`.
    pub grads: Gradients,
    pub accuracy: f64,
    pub mean_flow: f64,
    pub mean_policy: f64,
}

/// Factual weights and their action gradients.
#[derive(Debug, Clone)]
pub struct WeightWithActionGrad {
    pub weights: Vec<f64>,
    /// `d D / d x`, `[B, d]`.
    pub action_grads: Tensor,
}

/// `-log sigmoid(l)`, stable for large `|l|`.
fn softplus_neg(l: f64) -> f64 {
    if l >= 0.0 {
        (-l).exp().ln_1p()
    } else {
        -l + l.exp().ln_1p()
    }
}

impl Discriminator {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, Activation::Relu, OutputActivation::Identity);
        Ok(Self {
            net: Mlp::new(spec, rng)?,
            obs_dim,
            action_dim,
        })
    }

    pub fn from_mlp(net: Mlp, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if net.spec().input_dim() != obs_dim + action_dim || net.spec().output_dim() != 1 {
            return Err(Error::Shape("discriminator does not take (s, x) to a logit".into()));
        }
        Ok(Self {
            net,
            obs_dim,
            action_dim,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    fn input(&self, obs: &Tensor, actions: &Tensor) -> Result<Tensor> {
        if obs.cols() != self.obs_dim || actions.cols() != self.action_dim || obs.rows() != actions.rows() {
            return Err(Error::Dimension {
                context: "discriminator input".into(),
                expected: self.obs_dim + self.action_dim,
                found: obs.cols() + actions.cols(),
            });
        }
        Tensor::hcat(&[obs, actions])
    }

    pub fn logits(&self, obs: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.input(obs, actions)?)?.into_data())
    }

    /// `D(s, x) = sigmoid(logit)`.
    pub fn factual_weight(&self, obs: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(obs, actions)?.into_iter().map(sigmoid).collect())
    }

    /// Weights with their gradient in the action; parameters untouched.
    pub fn weight_with_action_grad(&self, obs: &Tensor, actions: &Tensor) -> Result<WeightWithActionGrad> {
        let (logits, cache) = self.net.forward_cached(&self.input(obs, actions)?)?;
        let weights: Vec<f64> = logits.data().iter().map(|&l| sigmoid(l)).collect();
        let up = Tensor::from_vec(
            &[weights.len(), 1],
            weights.iter().map(|w| w * (1.0 - w)).collect(),
        )?;
        let back = self.net.backward_cached(&cache, &up)?;
        Ok(WeightWithActionGrad {
            weights,
            action_grads: back.input.columns(self.obs_dim, self.action_dim),
        })
    }

    /// `-mean_b [log D(s, x_flow) + log(1 - D(s, x_pi))]`, gradients scaled by
    /// `coef`. Both action sets are constants.
    pub fn loss(
        &self,
        obs: &Tensor,
        flow_actions: &Tensor,
        policy_actions: &Tensor,
        coef: f64,
    ) -> Result<DiscriminatorLoss> {
        let b = obs.rows();
        let both_obs = Tensor::from_vec(&[2 * b, self.obs_dim], [obs.data(), obs.data()].concat())?;
        let both_act = Tensor::from_vec(
            &[2 * b, self.action_dim],
            [flow_actions.data(), policy_actions.data()].concat(),
        )?;
        let (logits, cache) = self.net.forward_cached(&self.input(&both_obs, &both_act)?)?;
        let l = logits.data();
        let mut up = vec![0.0; 2 * b];
        let (mut loss, mut correct, mut mean_flow, mut mean_policy) = (0.0, 0usize, 0.0, 0.0);
        for i in 0..b {
            let (l1, l0) = (l[i], l[b + i]);
            let (d1, d0) = (sigmoid(l1), sigmoid(l0));
            loss += softplus_neg(l1) + softplus_neg(-l0);
            up[i] = coef * (d1 - 1.0) / b as f64;
            up[b + i] = coef * d0 / b as f64;
            correct += usize::from(d1 > 0.5) + usize::from(d0 < 0.5);
            mean_flow += d1;
            mean_policy += d0;
        }
        let grads = self
            .net
            .backward_cached(&cache, &Tensor::from_vec(&[2 * b, 1], up)?)?
            .params;
        let n = b as f64;
        Ok(DiscriminatorLoss {
            loss: loss / n,
            grads,
            accuracy: correct as f64 / (2.0 * n),
            mean_flow: mean_flow / n,
            mean_policy: mean_policy / n,
        })
    }
}

/// Discriminator loss on fresh shared noise: class 1 is `mu(s, z)` from the
/// BC flow, class 0 is `pi(s, z)`.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_loss(
    d: &Discriminator,
    obs: &Tensor,
    v: &VelocityField,
    euler_steps: usize,
    pi: &OneStepPolicy,
    coef: f64,
    rng: &mut impl Rng,
) -> Result<DiscriminatorLoss> {
    let z = rng::standard_normal(&[obs.rows(), pi.action_dim()], rng);
    let flow = euler_sample(v, obs, &z, euler_steps)?;
    let policy = pi.act(obs, &z)?;
    d.loss(obs, &flow, &policy, coef)
}
