//! Every trained network plus its optimizer state.

use std::io::{Read, Write};
use std::path::Path;

use super::config::TrainConfig;
use crate::critic::CriticEnsemble;
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::flow::{OneStepPolicy, VelocityField};
use crate::nn::{checkpoint, checksum, Adam, AdamConfig, Mlp};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Optimizers {
    pub velocity: Adam,
    pub policy: Adam,
    pub critics: Vec<Adam>,
    pub discriminator: Adam,
}

#[derive(Debug, Clone)]
pub struct NetworkBundle {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub velocity: VelocityField,
    pub policy: OneStepPolicy,
    pub critics: CriticEnsemble,
    pub discriminator: Discriminator,
    pub optimizers: Optimizers,
    /// Gradient steps taken so far.
    pub step: usize,
}

/// Init streams, one per component, so that a component's initial
/// parameters never depend on which other components exist.
const INIT_STREAMS: [u64; 4] = [100, 101, 102, 103];

impl NetworkBundle {
    pub fn new(config: &TrainConfig, obs_dim: usize, action_dim: usize) -> Result<Self> {
        config.validate()?;
        let net = &config.network;
        let velocity = VelocityField::new(
            obs_dim,
            action_dim,
            &net.flow_hidden,
            &mut rng::stream(config.seed, INIT_STREAMS[0]),
        )?;
        let policy = OneStepPolicy::new(
            obs_dim,
            action_dim,
            &net.policy_hidden,
            &mut rng::stream(config.seed, INIT_STREAMS[1]),
        )?;
        let critics = CriticEnsemble::new(
            config.ensemble_size,
            obs_dim,
            action_dim,
            &net.critic_hidden,
            &mut rng::stream(config.seed, INIT_STREAMS[2]),
        )?;
        let discriminator = Discriminator::new(
            obs_dim,
            action_dim,
            &net.discriminator_hidden,
            &mut rng::stream(config.seed, INIT_STREAMS[3]),
        )?;
        let optimizers = Optimizers::fresh(config, &velocity, &policy, &critics, &discriminator);
        Ok(Self {
            obs_dim,
            action_dim,
            velocity,
            policy,
            critics,
            discriminator,
            optimizers,
            step: 0,
        })
    }

    pub fn velocity_checksum(&self) -> u64 {
        self.velocity.net().checksum()
    }

    pub fn policy_checksum(&self) -> u64 {
        self.policy.net().checksum()
    }

    pub fn discriminator_checksum(&self) -> u64 {
        self.discriminator.net().checksum()
    }

    /// Online members and targets together.
    pub fn critic_checksum(&self) -> u64 {
        let mut all: Vec<Tensor> = Vec::new();
        for m in self.critics.members().iter().chain(self.critics.targets()) {
            all.extend_from_slice(m.params());
        }
        checksum(&all)
    }

    fn nets(&self) -> Vec<&Mlp> {
        let mut nets = vec![self.velocity.net(), self.policy.net()];
        nets.extend(self.critics.members());
        nets.extend(self.critics.targets());
        nets.push(self.discriminator.net());
        nets
    }

    fn adams(&self) -> Vec<&Adam> {
        let o = &self.optimizers;
        let mut v = vec![&o.velocity, &o.policy];
        v.extend(o.critics.iter());
        v.push(&o.discriminator);
        v
    }

    /// Writes parameters, then per optimizer its step count (a 1-element
    /// tensor) and moments, then the bundle step.
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut owned: Vec<Tensor> = Vec::new();
        for net in self.nets() {
            owned.extend_from_slice(net.params());
        }
        for adam in self.adams() {
            owned.push(Tensor::from_vec(&[1], vec![adam.step_count() as f64])?);
            owned.extend_from_slice(adam.first_moments());
            owned.extend_from_slice(adam.second_moments());
        }
        owned.push(Tensor::from_vec(&[1], vec![self.step as f64])?);
        let refs: Vec<&Tensor> = owned.iter().collect();
        checkpoint::write_tensors(w, &refs)
    }

    /// Reads a checkpoint written for the architecture implied by `config`.
    pub fn read<R: Read>(r: R, config: &TrainConfig, obs_dim: usize, action_dim: usize) -> Result<Self> {
        let mut bundle = Self::new(config, obs_dim, action_dim)?;
        let tensors = checkpoint::read_tensors(r)?;
        let mut it = tensors.into_iter();
        let mut take = |n: usize, what: &str| -> Result<Vec<Tensor>> {
            let out: Vec<Tensor> = it.by_ref().take(n).collect();
            if out.len() != n {
                return Err(Error::Format(format!("checkpoint ends inside {what}")));
            }
            Ok(out)
        };
        let mut load = |net: &mut Mlp, what: &str| -> Result<()> {
            let params = take(net.params().len(), what)?;
            *net = Mlp::from_params(net.spec().clone(), params)
                .map_err(|e| Error::Format(format!("{what}: {e}")))?;
            Ok(())
        };
        load(bundle.velocity.net_mut(), "velocity field")?;
        load(bundle.policy.net_mut(), "policy")?;
        for m in bundle.critics.members_mut() {
            load(m, "critic")?;
        }
        for m in bundle.critics.targets_mut() {
            load(m, "critic target")?;
        }
        load(bundle.discriminator.net_mut(), "discriminator")?;
        let o = &mut bundle.optimizers;
        let mut adams: Vec<&mut Adam> = vec![&mut o.velocity, &mut o.policy];
        adams.extend(o.critics.iter_mut());
        adams.push(&mut o.discriminator);
        for adam in adams {
            let n = adam.first_moments().len();
            let step = take(1, "optimizer step")?[0].data()[0] as u64;
            let first = take(n, "optimizer moments")?;
            let second = take(n, "optimizer moments")?;
            adam.restore(step, first, second)?;
        }
        bundle.step = take(1, "bundle step")?[0].data()[0] as usize;
        if it.next().is_some() {
            return Err(Error::Format("trailing tensors in checkpoint".into()));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path, config: &TrainConfig, obs_dim: usize, action_dim: usize) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f), config, obs_dim, action_dim)
    }
}

impl Optimizers {
    fn fresh(
        config: &TrainConfig,
        velocity: &VelocityField,
        policy: &OneStepPolicy,
        critics: &CriticEnsemble,
        discriminator: &Discriminator,
    ) -> Self {
        let lr = &config.lr;
        Self {
            velocity: Adam::new(AdamConfig::with_lr(lr.flow), velocity.net().params()),
            policy: Adam::new(AdamConfig::with_lr(lr.policy), policy.net().params()),
            critics: critics
                .members()
                .iter()
                .map(|m| Adam::new(AdamConfig::with_lr(lr.critic), m.params()))
                .collect(),
            discriminator: Adam::new(
                AdamConfig::with_lr(lr.discriminator),
                discriminator.net().params(),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::config::NetworkConfig;

    fn small() -> TrainConfig {
        TrainConfig {
            network: NetworkConfig {
                critic_hidden: vec![4],
                flow_hidden: vec![5],
                policy_hidden: vec![3],
                discriminator_hidden: vec![2],
            },
            ensemble_size: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = small();
        let mut b = NetworkBundle::new(&cfg, 2, 1).unwrap();
        b.step = 17;
        b.critics.members_mut()[1].params_mut()[0].scale(3.0);
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        let back = NetworkBundle::read(&buf[..], &cfg, 2, 1).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.critic_checksum(), b.critic_checksum());
        assert_eq!(back.policy_checksum(), b.policy_checksum());
        assert_eq!(back.velocity_checksum(), b.velocity_checksum());
        assert_eq!(back.discriminator_checksum(), b.discriminator_checksum());
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let cfg = small();
        let b = NetworkBundle::new(&cfg, 2, 1).unwrap();
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        let other = TrainConfig {
            ensemble_size: 2,
            ..small()
        };
        assert!(NetworkBundle::read(&buf[..], &other, 2, 1).is_err());
    }

    #[test]
    fn init_is_per_component() {
        let a = NetworkBundle::new(&small(), 2, 1).unwrap();
        let b = NetworkBundle::new(
            &TrainConfig {
                ensemble_size: 2,
                ..small()
            },
            2,
            1,
        )
        .unwrap();
        assert_eq!(a.policy_checksum(), b.policy_checksum());
        assert_eq!(a.discriminator_checksum(), b.discriminator_checksum());
    }
}
