//! `cfql`: data generation, training, fine-tuning, evaluation, tabular
//! bounds, gradient checks and sweeps.

mod bounds;
mod config;
mod run;
mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cfql_core::envs::{make_env, registry, spec, Env};
use cfql_core::nn::gradcheck::check_random_networks;
use cfql_core::trainer::{Mode, OnlineObjective};
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use sweep::Axis;

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "cfql", version, about = "Confounding-robust flow Q-learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Cfql,
    Fql,
    Bc,
}

impl From<Algo> for Mode {
    fn from(a: Algo) -> Self {
        match a {
            Algo::Cfql => Mode::Cfql,
            Algo::Fql => Mode::Fql,
            Algo::Bc => Mode::Bc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Fql,
    Balanced,
}

impl From<Objective> for OnlineObjective {
    fn from(o: Objective) -> Self {
        match o {
            Objective::Fql => OnlineObjective::Fql,
            Objective::Balanced => OnlineObjective::Balanced,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample an offline dataset from a registered environment.
    GenData {
        #[arg(long)]
        env: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a CSV export.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Offline training into a run directory.
    Train {
        #[arg(long, value_enum)]
        algo: Algo,
        /// TOML run config (JSON when the name ends in .json).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Online fine-tuning from a trained checkpoint.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        steps: usize,
        #[arg(long, value_enum)]
        objective: Option<Objective>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint in its environment.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Lower-bound tables of a tabular CMDP, checked against the true value.
    Bounds {
        /// CMDP JSON file or a registered tabular environment id.
        #[arg(long)]
        cmdp: String,
        /// `uniform` or a policy JSON file.
        #[arg(long, default_value = "uniform")]
        policy: String,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Finite-difference check of network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        configs: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Print the environment registry.
    ListEnvs {
        #[arg(long)]
        json: bool,
    },
    /// Offline runs over one hyperparameter axis.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values; the standard grid when absent.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        seeds: u64,
        /// First seed; runs use `seed..seed + seeds`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        algo: Option<Algo>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Finetune { .. } => "finetune",
            Command::Eval { .. } => "eval",
            Command::Bounds { .. } => "bounds",
            Command::Gradcheck { .. } => "gradcheck",
            Command::ListEnvs { .. } => "list-envs",
            Command::Sweep { .. } => "sweep",
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn gen_data(env: &str, episodes: Option<usize>, seed: u64, out: &Path, csv: Option<&Path>) -> Result<()> {
    let s = spec(env)?;
    let episodes = episodes.unwrap_or(s.default_episodes);
    if episodes == 0 {
        bail!("episodes must be positive");
    }
    let data = match make_env(env, seed)? {
        Env::Continuous(e) => e.sample_trajectories(episodes, seed)?,
        Env::Tabular(m) => m.sample_trajectories(episodes, s.horizon, seed, env)?,
    };
    data.save(out).with_context(|| format!("cannot write {}", out.display()))?;
    if let Some(p) = csv {
        let f = std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
        data.write_csv(std::io::BufWriter::new(f))?;
    }
    println!(
        "wrote {} records from {episodes} episodes, sha256 {}",
        data.len(),
        run::sha256_file(out)?
    );
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            env,
            episodes,
            seed,
            out,
            csv,
        } => gen_data(&env, episodes, seed, &out, csv.as_deref()),
        Command::Train {
            algo,
            config,
            seed,
            out,
            env,
            steps,
            episodes,
        } => {
            let mut c = RunConfig::load_or_default(config.as_deref())?;
            c.train.mode = algo.into();
            if let Some(e) = env {
                c.env = e;
            }
            if let Some(s) = steps {
                c.train.steps = s;
            }
            if episodes.is_some() {
                c.episodes = episodes;
            }
            let r = run::train_run(&c, seed, &out)?;
            print_json(&r)
        }
        Command::Finetune {
            ckpt,
            env,
            steps,
            objective,
            seed,
            out,
        } => {
            let r = run::finetune_run(&run::FinetuneArgs {
                ckpt: &ckpt,
                env: env.as_deref(),
                steps,
                objective: objective.map(Into::into),
                seed,
                out: &out,
            })?;
            print_json(&r)
        }
        Command::Eval { ckpt, episodes, seed } => print_json(&run::eval_checkpoint(&ckpt, episodes, seed)?),
        Command::Bounds {
            cmdp,
            policy,
            gamma,
            tol,
            json,
        } => {
            let m = bounds::load_cmdp(&cmdp)?;
            let p = bounds::load_policy(&policy, &m)?;
            let report = bounds::compute(&m, &p, gamma, tol)?;
            match json {
                Some(path) => {
                    let f = std::fs::File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
                    serde_json::to_writer_pretty(f, &report)?;
                    println!("valid: {} (max violation {:e})", report.valid, report.max_violation);
                }
                None => print_json(&report)?,
            }
            if !report.valid {
                bail!("lower bound exceeds the true value by {:e}", report.max_violation);
            }
            Ok(())
        }
        Command::Gradcheck { seed, configs, step } => {
            let r = check_random_networks(seed, configs, step)?;
            println!(
                "max relative gradient error {:e} over {} configs ({} coordinates, {} skipped)",
                r.max_rel_error, r.configs, r.coordinates_checked, r.coordinates_skipped
            );
            if r.max_rel_error > GRADCHECK_TOL {
                bail!("gradient error above {GRADCHECK_TOL:e} in {}", r.worst_config);
            }
            Ok(())
        }
        Command::ListEnvs { json } => {
            let specs = registry();
            if json {
                return print_json(&specs);
            }
            for s in specs {
                println!("{}", s.id);
                println!("  kind: {}", if s.tabular { "tabular" } else { "continuous" });
                println!("  obs_dim: {}  action_dim: {}  horizon: {}", s.obs_dim, s.action_dim, s.horizon);
                println!("  reward_bounds: [{}, {}]", s.reward_bounds.low, s.reward_bounds.high);
                println!("  confounder: {}", s.confounder);
                println!("  expert: {}", s.expert);
                println!("  success: {}", s.success);
                println!("  default_episodes: {}", s.default_episodes);
            }
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            seed,
            algo,
            out,
        } => {
            let mut c = RunConfig::load_or_default(config.as_deref())?;
            if let Some(a) = algo {
                c.train.mode = a.into();
            }
            let values = if values.is_empty() { axis.default_values() } else { values };
            let seeds: Vec<u64> = (seed..seed + seeds).collect();
            let summary = sweep::run_sweep(&c, axis, &values, &seeds, &out)?;
            println!("{},runs,mean_success,se,unstable", axis.name());
            for r in summary {
                println!("{},{},{:.4},{:.4},{}", r.value, r.runs, r.mean_success, r.se, r.unstable);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let name = cli.command.name();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {name}: {e:#}");
            ExitCode::from(1)
        }
    }
}
