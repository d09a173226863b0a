//! The per-batch update pipeline and the offline and online loops.

use rand::Rng;

use super::bundle::NetworkBundle;
use super::config::{Mode, OnlineObjective, TrainConfig};
use super::evaluate::{evaluate, Actor};
use super::metrics::{EvalRow, RunMetrics, StepMetrics};
use crate::cmdp::{Batch, ContinuousCmdpEnv, Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::flow::{euler_sample, flow_matching_loss};
use crate::discriminator::discriminator_loss;
use crate::rng::{self, LabRng};
use crate::tensor::Tensor;

/// Env stream offset of online episodes, clear of dataset and evaluation
/// episodes.
pub const ONLINE_EPISODE_BASE: u64 = 1 << 39;

const OFFLINE_STREAMS: u64 = 200;
const ONLINE_STREAMS: u64 = 300;

/// One stream per consumer, so that skipping a block never shifts the
/// randomness another block sees.
struct Streams {
    batch: LabRng,
    critic: LabRng,
    flow: LabRng,
    discriminator: LabRng,
    policy: LabRng,
    actor: LabRng,
}

impl Streams {
    fn new(seed: u64, base: u64) -> Self {
        Self {
            batch: rng::stream(seed, base),
            critic: rng::stream(seed, base + 1),
            flow: rng::stream(seed, base + 2),
            discriminator: rng::stream(seed, base + 3),
            policy: rng::stream(seed, base + 4),
            actor: rng::stream(seed, base + 5),
        }
    }
}

fn finite(v: f64, step: usize, component: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            step,
            component: component.into(),
        })
    }
}

/// Reports a non-finite intermediate as divergence of `component`.
fn blame(step: usize, component: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged {
            step,
            component: component.into(),
        },
        e => e,
    }
}

#[derive(Clone, Copy)]
struct Sums {
    critic: u64,
    velocity: u64,
    discriminator: u64,
    policy: u64,
}

impl Sums {
    fn of(b: &NetworkBundle) -> Self {
        Self {
            critic: b.critic_checksum(),
            velocity: b.velocity_checksum(),
            discriminator: b.discriminator_checksum(),
            policy: b.policy_checksum(),
        }
    }

    /// Fails if anything other than `owner` changed.
    fn verify(&self, after: &Sums, owner: &str) -> Result<()> {
        let pairs = [
            ("critic", self.critic, after.critic),
            ("velocity", self.velocity, after.velocity),
            ("discriminator", self.discriminator, after.discriminator),
            ("policy", self.policy, after.policy),
        ];
        for (name, before, now) in pairs {
            if name != owner && before != now {
                return Err(Error::InvalidModel(format!("{owner} update modified {name} parameters")));
            }
        }
        Ok(())
    }
}

/// Outputs of the policy block.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub loss: f64,
    pub distill: f64,
    pub q_mean: f64,
    pub weight_mean: Option<f64>,
    /// `d loss / d pi(s, z)`, `[B, d]`.
    pub action_grads: Tensor,
}

/// Robust policy loss on the first `robust_rows` rows, factual on the rest:
/// `-lambda mean_b q_b + alpha mean_b ||pi(s, z) - mu(s, z)||^2`.
/// Returns the loss and the parameter gradients of the one-step policy.
pub fn policy_update_grads(
    bundle: &NetworkBundle,
    config: &TrainConfig,
    obs: &Tensor,
    z: &Tensor,
    robust_rows: usize,
) -> Result<(PolicyStep, crate::nn::Gradients)> {
    let b = obs.rows();
    let d = bundle.action_dim;
    let mu = euler_sample(&bundle.velocity, obs, z, config.euler_steps)?;
    let cache = bundle.policy.act_cached(obs, z)?;
    let x = cache.actions();
    let qg = bundle.critics.q_with_action_grad(obs, x)?;
    let n = qg.values.len();

    let weights = if robust_rows == 0 {
        None
    } else if let Some(w) = config.pinned_factual_weight {
        Some((vec![w; b], Tensor::zeros(&[b, d])))
    } else {
        let r = bundle.discriminator.weight_with_action_grad(obs, x)?;
        Some((r.weights, r.action_grads))
    };

    let mut q = vec![0.0; b];
    let mut dq = Tensor::zeros(&[b, d]);
    let mut weight_sum = 0.0;
    for row in 0..b {
        let mean = qg.values.iter().map(|v| v[row]).sum::<f64>() / n as f64;
        let mut dmean = vec![0.0; d];
        for g in &qg.action_grads {
            for (acc, v) in dmean.iter_mut().zip(g.row(row)) {
                *acc += v;
            }
        }
        dmean.iter_mut().for_each(|v| *v /= n as f64);
        match &weights {
            Some((w, dw)) if row < robust_rows => {
                let (arg, min) = qg
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (i, v[row]))
                    .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
                let wr = w[row];
                weight_sum += wr;
                q[row] = wr * mean + (1.0 - wr) * min;
                let dmin = qg.action_grads[arg].row(row);
                for k in 0..d {
                    dq.row_mut(row)[k] =
                        wr * dmean[k] + (1.0 - wr) * dmin[k] + dw.row(row)[k] * (mean - min);
                }
            }
            _ => {
                q[row] = mean;
                dq.row_mut(row).copy_from_slice(&dmean);
            }
        }
    }

    let bf = b as f64;
    let q_mean = q.iter().sum::<f64>() / bf;
    let lambda = if config.normalize_q_loss {
        1.0 / (q.iter().map(|v| v.abs()).sum::<f64>() / bf).max(1e-12)
    } else {
        1.0
    };
    let mut distill = 0.0;
    let mut grad = Tensor::zeros(&[b, d]);
    for row in 0..b {
        for k in 0..d {
            let diff = x.row(row)[k] - mu.row(row)[k];
            distill += diff * diff;
            grad.row_mut(row)[k] = (-lambda * dq.row(row)[k] + 2.0 * config.alpha * diff) / bf;
        }
    }
    distill /= bf;
    let grads = bundle.policy.backward(&cache, &grad)?;
    let weight_mean = weights.map(|_| weight_sum / robust_rows.min(b) as f64);
    Ok((
        PolicyStep {
            loss: -lambda * q_mean + config.alpha * distill,
            distill,
            q_mean,
            weight_mean,
            action_grads: grad,
        },
        grads,
    ))
}

/// One pass of the four update blocks on `batch`. Rows before
/// `robust_rows` use the robust objective and feed the discriminator.
fn update(
    bundle: &mut NetworkBundle,
    config: &TrainConfig,
    batch: &Batch,
    robust_rows: usize,
    streams: &mut Streams,
    phase: &'static str,
) -> Result<StepMetrics> {
    let step = bundle.step;
    let check = config.check_isolation;
    let d = bundle.action_dim;
    let mut m = StepMetrics {
        step,
        phase,
        critic_losses: Vec::new(),
        flow_loss: 0.0,
        discriminator_loss: None,
        discriminator_accuracy: None,
        discriminator_mean_flow: None,
        discriminator_mean_policy: None,
        policy_loss: None,
        distill_loss: None,
        robust_q_mean: None,
        factual_weight_mean: None,
    };
    let rl = config.mode != Mode::Bc;

    if rl {
        let before = check.then(|| Sums::of(bundle));
        let loss = bundle
            .critics
            .critic_loss(batch, &bundle.policy, config.gamma, &mut streams.critic)
            .map_err(blame(step, "critic"))?;
        for (i, l) in loss.losses.iter().enumerate() {
            finite(*l, step, &format!("critic_{i}"))?;
        }
        for (i, g) in loss.grads.iter().enumerate() {
            let member = &mut bundle.critics.members_mut()[i];
            bundle.optimizers.critics[i].apply(member.params_mut(), &g.0)?;
        }
        bundle.critics.polyak_update(config.tau)?;
        m.critic_losses = loss.losses;
        if let Some(b) = before {
            b.verify(&Sums::of(bundle), "critic")?;
        }
    }

    {
        let before = check.then(|| Sums::of(bundle));
        let fl = flow_matching_loss(&bundle.velocity, &batch.obs, &batch.actions, &mut streams.flow)
            .map_err(blame(step, "flow"))?;
        m.flow_loss = finite(fl.loss, step, "flow")?;
        bundle
            .optimizers
            .velocity
            .apply(bundle.velocity.net_mut().params_mut(), &fl.grads.0)?;
        if let Some(b) = before {
            b.verify(&Sums::of(bundle), "velocity")?;
        }
    }

    if rl && config.uses_discriminator() && robust_rows > 0 {
        let before = check.then(|| Sums::of(bundle));
        let obs = batch.obs.gather_rows(&(0..robust_rows).collect::<Vec<_>>());
        let dl = discriminator_loss(
            &bundle.discriminator,
            &obs,
            &bundle.velocity,
            config.euler_steps,
            &bundle.policy,
            config.discriminator.at_step(step),
            &mut streams.discriminator,
        )
        .map_err(blame(step, "discriminator"))?;
        finite(dl.loss, step, "discriminator")?;
        bundle
            .optimizers
            .discriminator
            .apply(bundle.discriminator.net_mut().params_mut(), &dl.grads.0)?;
        m.discriminator_loss = Some(dl.loss);
        m.discriminator_accuracy = Some(dl.accuracy);
        m.discriminator_mean_flow = Some(dl.mean_flow);
        m.discriminator_mean_policy = Some(dl.mean_policy);
        if let Some(b) = before {
            b.verify(&Sums::of(bundle), "discriminator")?;
        }
    }

    if rl {
        let before = check.then(|| Sums::of(bundle));
        let z = rng::standard_normal(&[batch.len(), d], &mut streams.policy);
        let robust = if config.mode == Mode::Cfql { robust_rows } else { 0 };
        let (ps, grads) =
            policy_update_grads(bundle, config, &batch.obs, &z, robust).map_err(blame(step, "policy"))?;
        finite(ps.loss, step, "policy")?;
        bundle
            .optimizers
            .policy
            .apply(bundle.policy.net_mut().params_mut(), &grads.0)?;
        m.policy_loss = Some(ps.loss);
        m.distill_loss = Some(ps.distill);
        m.robust_q_mean = Some(ps.q_mean);
        m.factual_weight_mean = ps.weight_mean;
        if let Some(b) = before {
            b.verify(&Sums::of(bundle), "policy")?;
        }
    }

    bundle.step += 1;
    Ok(m)
}

fn check_dims(bundle: &NetworkBundle, data: &TransitionDataset) -> Result<()> {
    if data.obs_dim() != bundle.obs_dim || data.action_dim() != bundle.action_dim {
        return Err(Error::Dimension {
            context: format!("dataset {} against networks", data.meta().env_id),
            expected: bundle.obs_dim + bundle.action_dim,
            found: data.obs_dim() + data.action_dim(),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    Ok(())
}

fn sample_indices(n: usize, k: usize, rng: &mut LabRng) -> Vec<usize> {
    (0..k).map(|_| rng.random_range(0..n)).collect()
}

fn log_due(config: &TrainConfig, local: usize, total: usize) -> bool {
    local % config.log_every == 0 || local + 1 == total
}

fn eval_row(
    bundle: &NetworkBundle,
    config: &TrainConfig,
    env: &ContinuousCmdpEnv,
    phase: &'static str,
) -> Result<EvalRow> {
    let actor = Actor::for_mode(config.mode, config.euler_steps);
    Ok(EvalRow {
        step: bundle.step,
        phase,
        result: evaluate(bundle, actor, env, config.eval_episodes, config.seed)?,
    })
}

/// Fresh networks trained on `data`. With `env`, evaluates every
/// `eval_every` steps and once at the end.
pub fn train_offline(
    config: &TrainConfig,
    data: &TransitionDataset,
    env: Option<&ContinuousCmdpEnv>,
) -> Result<(NetworkBundle, RunMetrics)> {
    let mut bundle = NetworkBundle::new(config, data.obs_dim(), data.action_dim())?;
    let metrics = continue_offline(config, &mut bundle, data, env)?;
    Ok((bundle, metrics))
}

/// `config.steps` further offline updates of `bundle`.
pub fn continue_offline(
    config: &TrainConfig,
    bundle: &mut NetworkBundle,
    data: &TransitionDataset,
    env: Option<&ContinuousCmdpEnv>,
) -> Result<RunMetrics> {
    config.validate()?;
    check_dims(bundle, data)?;
    let mut streams = Streams::new(config.seed, OFFLINE_STREAMS);
    let mut metrics = RunMetrics::default();
    let b = config.batch_size;
    for local in 0..config.steps {
        let idx = sample_indices(data.len(), b, &mut streams.batch);
        let batch = data.batch(&idx);
        let m = update(bundle, config, &batch, b, &mut streams, "offline")?;
        if log_due(config, local, config.steps) {
            metrics.steps.push(m);
        }
        if let Some(env) = env {
            if config.eval_every > 0 && (local + 1) % config.eval_every == 0 && local + 1 != config.steps {
                metrics.evals.push(eval_row(bundle, config, env, "offline")?);
            }
        }
    }
    if let Some(env) = env {
        if config.eval_episodes > 0 {
            metrics.evals.push(eval_row(bundle, config, env, "offline")?);
        }
    }
    Ok(metrics)
}

/// Online fine-tuning: one env step with the current actor, then one
/// update, `config.online.steps` times.
pub fn train_online(
    config: &TrainConfig,
    bundle: &mut NetworkBundle,
    env: &ContinuousCmdpEnv,
    offline: &TransitionDataset,
) -> Result<(RunMetrics, TransitionDataset)> {
    config.validate()?;
    check_dims(bundle, offline)?;
    if env.obs_dim() != bundle.obs_dim || env.action_dim() != bundle.action_dim {
        return Err(Error::Dimension {
            context: format!("env {} against networks", env.id()),
            expected: bundle.obs_dim + bundle.action_dim,
            found: env.obs_dim() + env.action_dim(),
        });
    }
    let mut online = TransitionDataset::new(
        env.id(),
        config.seed,
        env.reward_bounds(),
        env.obs_dim(),
        env.action_dim(),
    );
    let mut metrics = RunMetrics::default();
    let total = config.online.steps;
    if total == 0 {
        return Ok((metrics, online));
    }
    let mut streams = Streams::new(config.seed, ONLINE_STREAMS);
    let actor = Actor::for_mode(config.mode, config.euler_steps);
    let b = config.batch_size;
    let mut episode_index = 0u64;
    let mut episode = env.reset(config.seed, ONLINE_EPISODE_BASE);
    for local in 0..total {
        if episode.is_done() {
            episode_index += 1;
            episode = env.reset(config.seed, ONLINE_EPISODE_BASE + episode_index);
        }
        let obs = episode.observation();
        let o = Tensor::from_vec(&[1, obs.len()], obs.clone())?;
        let z = rng::standard_normal(&[1, bundle.action_dim], &mut streams.actor);
        let mut action = actor.act(bundle, &o, &z)?.into_data();
        crate::cmdp::clip_action(&mut action);
        let out = episode.step(&action)?;
        online.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: out.next_obs,
            done: out.done,
            episode: episode_index as u32,
        })?;

        let (batch, robust_rows) = match config.online.objective {
            OnlineObjective::Fql => {
                let idx = sample_indices(offline.len() + online.len(), b, &mut streams.batch);
                let (off, on): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| i < offline.len());
                let on: Vec<usize> = on.iter().map(|i| i - offline.len()).collect();
                let batch = match (off.is_empty(), on.is_empty()) {
                    (false, false) => Batch::concat(&offline.batch(&off), &online.batch(&on))?,
                    (true, _) => online.batch(&on),
                    (_, true) => offline.batch(&off),
                };
                (batch, 0)
            }
            OnlineObjective::Balanced => {
                let n_off = b.div_ceil(2);
                let off = sample_indices(offline.len(), n_off, &mut streams.batch);
                let on = sample_indices(online.len(), b - n_off, &mut streams.batch);
                let batch = if on.is_empty() {
                    offline.batch(&off)
                } else {
                    Batch::concat(&offline.batch(&off), &online.batch(&on))?
                };
                (batch, n_off)
            }
        };
        let m = update(bundle, config, &batch, robust_rows, &mut streams, "online")?;
        if log_due(config, local, total) {
            metrics.steps.push(m);
        }
        if config.online.eval_every > 0 && (local + 1) % config.online.eval_every == 0 && local + 1 != total {
            metrics.evals.push(eval_row(bundle, config, env, "online")?);
        }
    }
    if config.eval_episodes > 0 {
        metrics.evals.push(eval_row(bundle, config, env, "online")?);
    }
    Ok((metrics, online))
}
