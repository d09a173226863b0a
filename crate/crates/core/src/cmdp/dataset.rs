//! Learner-visible offline data and its on-disk formats.
//!
//! The binary file is one JSON header line (the [`DatasetMetadata`]) followed
//! by fixed-width little-endian `f64` records laid out as
//! `obs | action | reward | next_obs | done | episode`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT: &str = "cfql-dataset-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBounds {
    pub low: f64,
    pub high: f64,
}

impl RewardBounds {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.low && y <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteSizes {
    pub states: usize,
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format: String,
    pub env_id: String,
    pub seed: u64,
    pub reward_bounds: RewardBounds,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub records: usize,
    pub episodes: usize,
    /// Bootstrap targets are masked on records with `done = 1`.
    pub bootstrap_masked_at_done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<DiscreteSizes>,
}

/// One learner-visible transition. There is deliberately no field for the
/// exogenous noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub episode: u32,
}

/// Column-oriented transition store.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    meta: DatasetMetadata,
    observations: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_observations: Vec<f64>,
    dones: Vec<bool>,
    episodes: Vec<u32>,
}

/// A sampled minibatch, ready for the networks.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_obs: Tensor,
    /// 1.0 for terminal records.
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Row-wise concatenation of two batches.
    pub fn concat(a: &Batch, b: &Batch) -> Result<Batch> {
        let stack = |x: &Tensor, y: &Tensor| -> Result<Tensor> {
            if x.cols() != y.cols() {
                return Err(Error::Shape("batch widths differ".into()));
            }
            let mut data = x.data().to_vec();
            data.extend_from_slice(y.data());
            Tensor::from_vec(&[x.rows() + y.rows(), x.cols()], data)
        };
        Ok(Batch {
            obs: stack(&a.obs, &b.obs)?,
            actions: stack(&a.actions, &b.actions)?,
            rewards: [a.rewards.as_slice(), &b.rewards].concat(),
            next_obs: stack(&a.next_obs, &b.next_obs)?,
            dones: [a.dones.as_slice(), &b.dones].concat(),
        })
    }
}

impl TransitionDataset {
    pub fn new(
        env_id: &str,
        seed: u64,
        reward_bounds: RewardBounds,
        obs_dim: usize,
        action_dim: usize,
    ) -> Self {
        Self {
            meta: DatasetMetadata {
                format: DATASET_FORMAT.into(),
                env_id: env_id.into(),
                seed,
                reward_bounds,
                obs_dim,
                action_dim,
                records: 0,
                episodes: 0,
                bootstrap_masked_at_done: true,
                discrete: None,
            },
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_observations: Vec::new(),
            dones: Vec::new(),
            episodes: Vec::new(),
        }
    }

    pub fn with_discrete(mut self, sizes: DiscreteSizes) -> Self {
        self.meta.discrete = Some(sizes);
        self
    }

    pub fn meta(&self) -> &DatasetMetadata {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.meta.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.meta.action_dim
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.obs.len() != self.meta.obs_dim || t.next_obs.len() != self.meta.obs_dim {
            return Err(Error::Dimension {
                context: "transition observation".into(),
                expected: self.meta.obs_dim,
                found: t.obs.len(),
            });
        }
        if t.action.len() != self.meta.action_dim {
            return Err(Error::Dimension {
                context: "transition action".into(),
                expected: self.meta.action_dim,
                found: t.action.len(),
            });
        }
        if !self.meta.reward_bounds.contains(t.reward) {
            return Err(Error::InvalidArgument(format!(
                "reward {} outside [{}, {}]",
                t.reward, self.meta.reward_bounds.low, self.meta.reward_bounds.high
            )));
        }
        if self.episodes.last().is_none_or(|&e| e != t.episode) {
            self.meta.episodes += 1;
        }
        self.observations.extend_from_slice(&t.obs);
        self.actions.extend_from_slice(&t.action);
        self.rewards.push(t.reward);
        self.next_observations.extend_from_slice(&t.next_obs);
        self.dones.push(t.done);
        self.episodes.push(t.episode);
        self.meta.records += 1;
        Ok(())
    }

    pub fn obs(&self, i: usize) -> &[f64] {
        let d = self.meta.obs_dim;
        &self.observations[i * d..(i + 1) * d]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        let d = self.meta.action_dim;
        &self.actions[i * d..(i + 1) * d]
    }

    pub fn reward(&self, i: usize) -> f64 {
        self.rewards[i]
    }

    pub fn next_obs(&self, i: usize) -> &[f64] {
        let d = self.meta.obs_dim;
        &self.next_observations[i * d..(i + 1) * d]
    }

    pub fn done(&self, i: usize) -> bool {
        self.dones[i]
    }

    pub fn episode(&self, i: usize) -> u32 {
        self.episodes[i]
    }

    pub fn record(&self, i: usize) -> Transition {
        Transition {
            obs: self.obs(i).to_vec(),
            action: self.action(i).to_vec(),
            reward: self.reward(i),
            next_obs: self.next_obs(i).to_vec(),
            done: self.done(i),
            episode: self.episode(i),
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let (od, ad) = (self.meta.obs_dim, self.meta.action_dim);
        let gather = |src: &[f64], w: usize| -> Tensor {
            let mut data = Vec::with_capacity(idx.len() * w);
            for &i in idx {
                data.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
            Tensor::from_vec(&[idx.len(), w], data).expect("non-empty batch")
        };
        Batch {
            obs: gather(&self.observations, od),
            actions: gather(&self.actions, ad),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: gather(&self.next_observations, od),
            dones: idx.iter().map(|&i| f64::from(u8::from(self.dones[i]))).collect(),
        }
    }

    /// Appends every record of `other`, renumbering its episodes after ours.
    pub fn extend_from(&mut self, other: &TransitionDataset) -> Result<()> {
        let offset = self.episodes.last().map_or(0, |e| e + 1);
        for i in 0..other.len() {
            let mut t = other.record(i);
            t.episode += offset;
            self.push(t)?;
        }
        Ok(())
    }

    fn record_width(&self) -> usize {
        2 * self.meta.obs_dim + self.meta.action_dim + 3
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.meta)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(8 * self.record_width() * self.len());
        for i in 0..self.len() {
            let values = self
                .obs(i)
                .iter()
                .chain(self.action(i))
                .copied()
                .chain([self.reward(i)])
                .chain(self.next_obs(i).iter().copied())
                .chain([f64::from(u8::from(self.done(i))), f64::from(self.episode(i))]);
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let meta: DatasetMetadata = serde_json::from_str(header.trim_end())?;
        if meta.format != DATASET_FORMAT {
            return Err(Error::Format(format!("unknown dataset format `{}`", meta.format)));
        }
        let mut ds = TransitionDataset::new(
            &meta.env_id,
            meta.seed,
            meta.reward_bounds,
            meta.obs_dim,
            meta.action_dim,
        );
        ds.meta.bootstrap_masked_at_done = meta.bootstrap_masked_at_done;
        ds.meta.discrete = meta.discrete;
        let width = ds.record_width();
        let mut raw = Vec::new();
        reader.read_to_end(&mut raw)?;
        if raw.len() != 8 * width * meta.records {
            return Err(Error::Format(format!(
                "expected {} records of {} bytes, found {} bytes",
                meta.records,
                8 * width,
                raw.len()
            )));
        }
        let (od, ad) = (meta.obs_dim, meta.action_dim);
        for rec in raw.chunks_exact(8 * width) {
            let v: Vec<f64> = rec
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ds.push(Transition {
                obs: v[..od].to_vec(),
                action: v[od..od + ad].to_vec(),
                reward: v[od + ad],
                next_obs: v[od + ad + 1..2 * od + ad + 1].to_vec(),
                done: v[2 * od + ad + 1] != 0.0,
                episode: v[2 * od + ad + 2] as u32,
            })?;
        }
        if ds.meta.episodes != meta.episodes {
            return Err(Error::Format("episode count does not match header".into()));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(f)
    }

    /// Human-readable export with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["episode".to_string()];
        header.extend((0..self.obs_dim()).map(|k| format!("obs_{k}")));
        header.extend((0..self.action_dim()).map(|k| format!("action_{k}")));
        header.push("reward".into());
        header.extend((0..self.obs_dim()).map(|k| format!("next_obs_{k}")));
        header.push("done".into());
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.episode(i).to_string()];
            row.extend(self.obs(i).iter().map(f64::to_string));
            row.extend(self.action(i).iter().map(f64::to_string));
            row.push(self.reward(i).to_string());
            row.extend(self.next_obs(i).iter().map(f64::to_string));
            row.push(u8::from(self.done(i)).to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}
