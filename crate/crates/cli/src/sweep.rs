//! Hyperparameter sweeps over the discriminator coefficient or the ensemble
//! size, one offline run per (value, seed).

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cfql_core::trainer::{mean_se, RunMetrics};
use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::run::{generate_dataset, train_in_memory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    DiscCoef,
    Ensembles,
}

impl Axis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::DiscCoef => vec![1.0, 5.0, 10.0, 15.0],
            Axis::Ensembles => vec![2.0, 4.0, 6.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::DiscCoef => "disc_coef",
            Axis::Ensembles => "ensembles",
        }
    }

    fn apply(self, config: &mut RunConfig, value: f64) -> Result<()> {
        match self {
            Axis::DiscCoef => {
                if !(value >= 0.0) {
                    bail!("discriminator coefficient {value} must be non-negative");
                }
                config.train.discriminator.coef = value;
            }
            Axis::Ensembles => {
                if value.fract() != 0.0 || value < 2.0 {
                    bail!("ensemble size {value} must be an integer of at least 2");
                }
                config.train.ensemble_size = value as usize;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub value: f64,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    /// Variance of the success rate over evaluations in the last fifth of
    /// training.
    pub late_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub value: f64,
    pub runs: usize,
    pub mean_success: f64,
    pub se: f64,
    pub late_variance: f64,
    pub unstable: bool,
}

fn late_variance(m: &RunMetrics, total_steps: usize) -> f64 {
    let cutoff = total_steps - total_steps / 5;
    let late: Vec<f64> = m
        .evals
        .iter()
        .filter(|e| e.step >= cutoff)
        .map(|e| e.result.success_rate)
        .collect();
    if late.len() < 2 {
        return 0.0;
    }
    let mean = late.iter().sum::<f64>() / late.len() as f64;
    late.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (late.len() - 1) as f64
}

/// Per-value means, with `unstable` set where the late evaluation variance
/// exceeds twice that of the value with the best mean success.
pub fn summarize(values: &[f64], rows: &[RunRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = values
        .iter()
        .map(|&v| {
            let mine: Vec<&RunRow> = rows.iter().filter(|r| r.value == v).collect();
            let succ: Vec<f64> = mine.iter().map(|r| r.success_rate).collect();
            let (mean, se) = mean_se(&succ);
            SummaryRow {
                value: v,
                runs: mine.len(),
                mean_success: mean,
                se,
                late_variance: mine.iter().map(|r| r.late_variance).sum::<f64>() / mine.len().max(1) as f64,
                unstable: false,
            }
        })
        .collect();
    if let Some(best) = out
        .iter()
        .max_by(|a, b| a.mean_success.total_cmp(&b.mean_success))
        .map(|b| b.late_variance)
    {
        for r in &mut out {
            r.unstable = r.late_variance > 2.0 * best;
        }
    }
    out
}

/// Worker count: `CFQL_THREADS` when set, else the available parallelism.
pub fn worker_count() -> Result<usize> {
    match std::env::var("CFQL_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("CFQL_THREADS must be a positive integer, got `{s}`"),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

pub fn run_sweep(
    template: &RunConfig,
    axis: Axis,
    values: &[f64],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<SummaryRow>> {
    if values.is_empty() || seeds.is_empty() {
        bail!("a sweep needs at least one value and one seed");
    }
    template.validate()?;
    let mut template = template.clone();
    if template.train.eval_every == 0 {
        template.train.eval_every = (template.train.steps / 10).max(1);
    }
    let mut jobs = Vec::new();
    for &v in values {
        let mut c = template.clone();
        axis.apply(&mut c, v)?;
        c.validate()?;
        for &s in seeds {
            jobs.push((v, s, c.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .context("cannot start sweep workers")?;
    let rows: Vec<RunRow> = pool.install(|| {
        jobs.par_iter()
            .map(|(v, s, c)| -> Result<RunRow> {
                let data = generate_dataset(c, *s)?;
                let o = train_in_memory(c, *s, &data).with_context(|| format!("{} = {v}, seed {s}", axis.name()))?;
                let last = o.result.final_eval.context("run produced no evaluation")?;
                Ok(RunRow {
                    value: *v,
                    seed: *s,
                    success_rate: last.success_rate,
                    mean_return: last.mean_return,
                    late_variance: late_variance(&o.metrics, c.train.steps),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(values, &rows);

    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut w = csv::Writer::from_path(out.join("runs.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record([axis.name(), "runs", "mean_success", "se", "late_variance", "unstable"])?;
    for r in &summary {
        w.write_record([
            r.value.to_string(),
            r.runs.to_string(),
            r.mean_success.to_string(),
            r.se.to_string(),
            r.late_variance.to_string(),
            r.unstable.to_string(),
        ])?;
    }
    w.flush()?;
    let mut f = std::fs::File::create(out.join("template.json"))?;
    serde_json::to_writer_pretty(&mut f, &template)?;
    f.write_all(b"\n")?;
    Ok(summary)
}
