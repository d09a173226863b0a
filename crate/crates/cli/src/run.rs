//! Run directories: config snapshot, manifest, dataset, metrics, checkpoints
//! and the final summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context, Result};
use cfql_core::cmdp::{ContinuousCmdpEnv, TransitionDataset};
use cfql_core::envs::make_env;
use cfql_core::trainer::{
    evaluate, train_offline, train_online, Actor, EvalResult, NetworkBundle, OnlineObjective, RunMetrics,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESULT_FILE: &str = "result.json";
pub const DATASET_FILE: &str = "dataset.bin";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub path: String,
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub dataset: DatasetRecord,
    /// Checkpoint this run started from, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent_checkpoint: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub env: String,
    pub mode: String,
    pub seed: u64,
    pub gradient_steps: usize,
    pub final_eval: Option<EvalSummary>,
    /// Evaluation of the starting checkpoint, for fine-tuning runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_eval: Option<EvalSummary>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub success_se: f64,
    pub mean_return: f64,
    pub return_se: f64,
}

impl From<EvalResult> for EvalSummary {
    fn from(r: EvalResult) -> Self {
        Self {
            episodes: r.episodes,
            success_rate: r.success_rate,
            success_se: r.success_se,
            mean_return: r.mean_return,
            return_se: r.return_se,
        }
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))
}

pub fn continuous_env(id: &str) -> Result<ContinuousCmdpEnv> {
    Ok(make_env(id, 0)?.as_continuous()?.clone())
}

/// Offline data of a run: drawn from the environment with the run seed.
pub fn generate_dataset(config: &RunConfig, seed: u64) -> Result<TransitionDataset> {
    let env = continuous_env(&config.env)?;
    Ok(env.sample_trajectories(config.episodes()?, seed)?)
}

pub struct TrainOutcome {
    pub bundle: NetworkBundle,
    pub metrics: RunMetrics,
    pub result: RunResult,
}

/// Offline training in memory. `config.train.seed` is replaced by `seed`,
/// which also seeds the dataset.
pub fn train_in_memory(config: &RunConfig, seed: u64, data: &TransitionDataset) -> Result<TrainOutcome> {
    let env = continuous_env(&config.env)?;
    let mut tc = config.train.clone();
    tc.seed = seed;
    let (bundle, metrics) = train_offline(&tc, data, Some(&env)).context("training")?;
    let result = RunResult {
        env: config.env.clone(),
        mode: tc.mode.to_string(),
        seed,
        gradient_steps: bundle.step,
        final_eval: metrics.last_eval().map(|e| e.result.into()),
        initial_eval: None,
    };
    Ok(TrainOutcome { bundle, metrics, result })
}

fn write_metrics(path: &Path, metrics: &RunMetrics, ensemble: usize) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    metrics.write_csv(std::io::BufWriter::new(f), ensemble)?;
    Ok(())
}

/// Resolved config with the run seed written in.
fn resolved(config: &RunConfig, seed: u64) -> RunConfig {
    let mut c = config.clone();
    c.train.seed = seed;
    c
}

/// `train`: writes the config and manifest, then the dataset, trains, and
/// writes metrics, the final checkpoint and the result.
pub fn train_run(config: &RunConfig, seed: u64, out: &Path) -> Result<RunResult> {
    config.validate()?;
    let config = resolved(config, seed);
    fs::create_dir_all(out.join(CHECKPOINT_DIR)).with_context(|| format!("cannot create {}", out.display()))?;
    write_json(&out.join(CONFIG_FILE), &config)?;

    let data = generate_dataset(&config, seed).context("dataset generation")?;
    let data_path = out.join(DATASET_FILE);
    data.save(&data_path)?;
    let mut manifest = RunManifest {
        command: "train".into(),
        config: config.clone(),
        seed,
        dataset: DatasetRecord {
            path: DATASET_FILE.into(),
            sha256: sha256_file(&data_path)?,
            records: data.len(),
        },
        parent_checkpoint: None,
        started_unix: now(),
        finished_unix: None,
        artifacts: Vec::new(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    let outcome = train_in_memory(&config, seed, &data)?;
    write_metrics(&out.join(METRICS_FILE), &outcome.metrics, config.train.ensemble_size)?;
    let ckpt = Path::new(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    outcome.bundle.save(&out.join(&ckpt))?;
    write_json(&out.join(RESULT_FILE), &outcome.result)?;

    manifest.finished_unix = Some(now());
    manifest.artifacts = vec![
        CONFIG_FILE.into(),
        DATASET_FILE.into(),
        METRICS_FILE.into(),
        ckpt.to_string_lossy().into_owned(),
        RESULT_FILE.into(),
    ];
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(outcome.result)
}

/// A checkpoint together with the run directory it came from.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub bundle: NetworkBundle,
}

/// Loads `<run>/checkpoints/<file>` using `<run>/config.json`.
pub fn load_checkpoint(ckpt: &Path) -> Result<LoadedRun> {
    let dir = ckpt
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| anyhow!("checkpoint {} is not inside a run directory", ckpt.display()))?
        .to_path_buf();
    let config: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    let env = continuous_env(&config.env)?;
    let bundle = NetworkBundle::load(ckpt, &config.train, env.obs_dim(), env.action_dim())
        .with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    Ok(LoadedRun { dir, config, bundle })
}

pub fn eval_checkpoint(ckpt: &Path, episodes: usize, seed: Option<u64>) -> Result<EvalSummary> {
    let run = load_checkpoint(ckpt)?;
    let env = continuous_env(&run.config.env)?;
    let tc = &run.config.train;
    let actor = Actor::for_mode(tc.mode, tc.euler_steps);
    Ok(evaluate(&run.bundle, actor, &env, episodes, seed.unwrap_or(tc.seed))
        .context("evaluation")?
        .into())
}

pub struct FinetuneArgs<'a> {
    pub ckpt: &'a Path,
    pub env: Option<&'a str>,
    pub steps: usize,
    pub objective: Option<OnlineObjective>,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

/// `finetune`: online phase from a trained checkpoint, using the parent
/// run's offline dataset.
pub fn finetune_run(args: &FinetuneArgs) -> Result<RunResult> {
    let run = load_checkpoint(args.ckpt)?;
    let mut config = run.config.clone();
    if let Some(env) = args.env {
        if env != config.env {
            anyhow::bail!("checkpoint was trained on {}, not {env}", config.env);
        }
    }
    let seed = args.seed.unwrap_or(config.train.seed);
    config.train.seed = seed;
    config.train.online.steps = args.steps;
    if let Some(o) = args.objective {
        config.train.online.objective = o;
    }
    config.validate()?;

    let parent_data = run.dir.join(DATASET_FILE);
    let data = TransitionDataset::load(&parent_data)
        .with_context(|| format!("cannot load offline dataset {}", parent_data.display()))?;
    fs::create_dir_all(args.out.join(CHECKPOINT_DIR))
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    write_json(&args.out.join(CONFIG_FILE), &config)?;
    let mut manifest = RunManifest {
        command: "finetune".into(),
        config: config.clone(),
        seed,
        dataset: DatasetRecord {
            path: parent_data.to_string_lossy().into_owned(),
            sha256: sha256_file(&parent_data)?,
            records: data.len(),
        },
        parent_checkpoint: Some(args.ckpt.to_string_lossy().into_owned()),
        started_unix: now(),
        finished_unix: None,
        artifacts: Vec::new(),
    };
    write_json(&args.out.join(MANIFEST_FILE), &manifest)?;

    let env = continuous_env(&config.env)?;
    let mut bundle = run.bundle;
    let tc = &config.train;
    let actor = Actor::for_mode(tc.mode, tc.euler_steps);
    let initial = if tc.eval_episodes > 0 {
        Some(evaluate(&bundle, actor, &env, tc.eval_episodes, seed)?.into())
    } else {
        None
    };
    let (metrics, online) = train_online(tc, &mut bundle, &env, &data).context("fine-tuning")?;
    write_metrics(&args.out.join(METRICS_FILE), &metrics, tc.ensemble_size)?;
    online.save(&args.out.join("online.bin"))?;
    let ckpt = Path::new(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    bundle.save(&args.out.join(&ckpt))?;
    let result = RunResult {
        env: config.env.clone(),
        mode: tc.mode.to_string(),
        seed,
        gradient_steps: bundle.step,
        final_eval: metrics.last_eval().map(|e| e.result.into()),
        initial_eval: initial,
    };
    write_json(&args.out.join(RESULT_FILE), &result)?;
    manifest.finished_unix = Some(now());
    manifest.artifacts = vec![
        CONFIG_FILE.into(),
        METRICS_FILE.into(),
        "online.bin".into(),
        ckpt.to_string_lossy().into_owned(),
        RESULT_FILE.into(),
    ];
    write_json(&args.out.join(MANIFEST_FILE), &manifest)?;
    Ok(result)
}
