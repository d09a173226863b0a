//! Flow-matching behavioral cloning and the one-step target policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, ForwardCache, Gradients, Mlp, MlpSpec, OutputActivation};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Euler steps `M`.
    pub euler_steps: usize,
    /// Noise and action dimension `d`.
    pub action_dim: usize,
    /// Distillation coefficient `alpha`.
    pub alpha: f64,
}

impl FlowConfig {
    pub fn new(action_dim: usize) -> Self {
        Self {
            euler_steps: 10,
            action_dim,
            alpha: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.euler_steps == 0 {
            return Err(Error::InvalidArgument("Euler step count must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidArgument("alpha must be non-negative".into()));
        }
        Ok(())
    }
}

/// `v(t, s, x)`: input `[t | s | x]`, output of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    net: Mlp,
    obs_dim: usize,
    action_dim: usize,
}

/// A scalar loss and its parameter gradients.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Gradients,
}

fn check_rows(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension {
            context: what.into(),
            expected: a.rows(),
            found: b.rows(),
        });
    }
    Ok(())
}

fn check_cols(t: &Tensor, want: usize, what: &str) -> Result<()> {
    if t.cols() != want {
        return Err(Error::Dimension {
            context: what.into(),
            expected: want,
            found: t.cols(),
        });
    }
    Ok(())
}

impl VelocityField {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![1 + obs_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let spec = MlpSpec::new(sizes, Activation::Gelu, OutputActivation::Identity);
        Ok(Self {
            net: Mlp::new(spec, rng)?,
            obs_dim,
            action_dim,
        })
    }

    pub fn from_mlp(net: Mlp, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if net.spec().input_dim() != 1 + obs_dim + action_dim || net.spec().output_dim() != action_dim {
            return Err(Error::Shape("velocity network does not take (t, s, x) to d".into()));
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

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input(&self, t: &[f64], obs: &Tensor, x: &Tensor) -> Result<Tensor> {
        check_cols(obs, self.obs_dim, "velocity observation")?;
        check_cols(x, self.action_dim, "velocity action")?;
        check_rows(obs, x, "velocity batch")?;
        let tt = Tensor::from_vec(&[t.len(), 1], t.to_vec())?;
        check_rows(obs, &tt, "velocity time")?;
        Tensor::hcat(&[&tt, obs, x])
    }

    /// Velocity at per-row times `t`.
    pub fn velocity(&self, t: &[f64], obs: &Tensor, x: &Tensor) -> Result<Tensor> {
        self.net.forward(&self.input(t, obs, x)?)
    }
}

/// Flow-matching loss for given noise `x0` and times `t`:
/// `mean_b || v(t, s, (1-t) x0 + t x1) - (x1 - x0) ||^2`.
pub fn flow_matching_loss_at(
    v: &VelocityField,
    obs: &Tensor,
    actions: &Tensor,
    x0: &Tensor,
    t: &[f64],
) -> Result<LossGrad> {
    check_rows(actions, x0, "flow noise")?;
    let (b, d) = (actions.rows(), actions.cols());
    let mut xt = Tensor::zeros(&[b, d]);
    let mut target = Tensor::zeros(&[b, d]);
    for i in 0..b {
        for k in 0..d {
            let (a0, a1) = (x0.row(i)[k], actions.row(i)[k]);
            xt.row_mut(i)[k] = (1.0 - t[i]) * a0 + t[i] * a1;
            target.row_mut(i)[k] = a1 - a0;
        }
    }
    let input = v.input(t, obs, &xt)?;
    let (out, cache) = v.net.forward_cached(&input)?;
    let mut upstream = out.clone();
    let mut loss = 0.0;
    for (u, tg) in upstream.data_mut().iter_mut().zip(target.data()) {
        let diff = *u - tg;
        loss += diff * diff;
        *u = 2.0 * diff / b as f64;
    }
    let back = v.net.backward_cached(&cache, &upstream)?;
    Ok(LossGrad {
        loss: loss / b as f64,
        grads: back.params,
    })
}

/// Flow-matching loss with `x0 ~ N(0, I)` and `t ~ U(0, 1)` drawn from `rng`.
pub fn flow_matching_loss(
    v: &VelocityField,
    obs: &Tensor,
    actions: &Tensor,
    rng: &mut impl Rng,
) -> Result<LossGrad> {
    let x0 = rng::standard_normal(&[actions.rows(), actions.cols()], rng);
    let t: Vec<f64> = (0..actions.rows()).map(|_| rng.random::<f64>()).collect();
    flow_matching_loss_at(v, obs, actions, &x0, &t)
}

/// Explicit Euler integration of the field from `z` over `steps` steps at
/// times `k / steps`, without clipping.
pub fn euler_integrate(v: &VelocityField, obs: &Tensor, z: &Tensor, steps: usize) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::InvalidArgument("Euler step count must be at least 1".into()));
    }
    let mut x = z.clone();
    let h = 1.0 / steps as f64;
    let mut t = vec![0.0; z.rows()];
    for k in 0..steps {
        t.iter_mut().for_each(|ti| *ti = k as f64 * h);
        let vel = v.velocity(&t, obs, &x)?;
        x.add_scaled(&vel, h);
    }
    Ok(x)
}

/// BC flow action `mu(s, z)`: Euler integration clipped to `[-1, 1]^d`.
pub fn euler_sample(v: &VelocityField, obs: &Tensor, z: &Tensor, steps: usize) -> Result<Tensor> {
    Ok(euler_integrate(v, obs, z, steps)?.map(|a| a.clamp(-1.0, 1.0)))
}

/// `pi(s, z) = tanh(f(s, z))`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepPolicy {
    net: Mlp,
    obs_dim: usize,
    action_dim: usize,
}

/// Forward state kept for the policy backward pass.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    inner: ForwardCache,
    actions: Tensor,
}

impl PolicyCache {
    pub fn actions(&self) -> &Tensor {
        &self.actions
    }
}

impl OneStepPolicy {
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let spec = MlpSpec::new(sizes, Activation::Gelu, OutputActivation::Identity);
        Ok(Self {
            net: Mlp::new(spec, rng)?,
            obs_dim,
            action_dim,
        })
    }

    pub fn from_mlp(net: Mlp, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if net.spec().input_dim() != obs_dim + action_dim || net.spec().output_dim() != action_dim {
            return Err(Error::Shape("policy network does not take (s, z) to d".into()));
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

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input(&self, obs: &Tensor, z: &Tensor) -> Result<Tensor> {
        check_cols(obs, self.obs_dim, "policy observation")?;
        check_cols(z, self.action_dim, "policy noise")?;
        check_rows(obs, z, "policy batch")?;
        Tensor::hcat(&[obs, z])
    }

    pub fn act(&self, obs: &Tensor, z: &Tensor) -> Result<Tensor> {
        Ok(self.net.forward(&self.input(obs, z)?)?.map(f64::tanh))
    }

    pub fn act_cached(&self, obs: &Tensor, z: &Tensor) -> Result<PolicyCache> {
        let (raw, inner) = self.net.forward_cached(&self.input(obs, z)?)?;
        Ok(PolicyCache {
            inner,
            actions: raw.map(f64::tanh),
        })
    }

    /// Parameter gradients given the gradient of the loss with respect to
    /// the squashed actions.
    pub fn backward(&self, cache: &PolicyCache, d_actions: &Tensor) -> Result<Gradients> {
        let mut upstream = d_actions.clone();
        for (u, a) in upstream.data_mut().iter_mut().zip(cache.actions.data()) {
            *u *= 1.0 - a * a;
        }
        Ok(self.net.backward_cached(&cache.inner, &upstream)?.params)
    }
}

/// `mean_b || pi(s, z) - target ||^2` where `target` holds `mu(s, z)` for
/// the same noise; the target is a constant.
pub fn distill_loss_against(
    pi: &OneStepPolicy,
    obs: &Tensor,
    z: &Tensor,
    target: &Tensor,
) -> Result<LossGrad> {
    let cache = pi.act_cached(obs, z)?;
    let b = obs.rows() as f64;
    let mut d = cache.actions.clone();
    let mut loss = 0.0;
    for (g, t) in d.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        loss += diff * diff;
        *g = 2.0 * diff / b;
    }
    Ok(LossGrad {
        loss: loss / b,
        grads: pi.backward(&cache, &d)?,
    })
}

/// Distillation toward the Euler-sampled BC flow under shared noise `z`.
pub fn distill_loss(
    pi: &OneStepPolicy,
    v: &VelocityField,
    euler_steps: usize,
    obs: &Tensor,
    z: &Tensor,
) -> Result<LossGrad> {
    let target = euler_sample(v, obs, z, euler_steps)?;
    distill_loss_against(pi, obs, z, &target)
}
