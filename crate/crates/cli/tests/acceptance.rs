//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Criteria run one after another so the
//! runtime limits measure a single run.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use cfql_core::bounds::{expectation_form_check, random_policy, solve_lower_bound, BoundProblem};
use cfql_core::cmdp::{ContinuousCmdpEnv, RewardBounds, TransitionDataset};
use cfql_core::critic::robust_q;
use cfql_core::discriminator::Discriminator;
use cfql_core::envs::{random_cmdp, ConfoundedBandit, TwoGoalReacher, BANDIT_ID, REACHER_ID};
use cfql_core::flow::{euler_integrate, euler_sample, flow_matching_loss, VelocityField};
use cfql_core::nn::gradcheck::check_random_networks;
use cfql_core::nn::{Adam, AdamConfig};
use cfql_core::rng::{self, LabRng};
use cfql_core::trainer::{
    mean_se, train_offline, train_online, Actor, LearningRates, Mode, NetworkBundle, NetworkConfig,
    OnlineConfig, OnlineObjective, RunMetrics, TrainConfig,
};
use cfql_core::Tensor;
use rand::Rng;

const SEEDS: u64 = 8;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Offline runs shared by the policy-level criteria.
#[derive(Default)]
struct Shared {
    reacher_cfql: Vec<(NetworkBundle, TrainConfig, TransitionDataset, f64)>,
}

// ---------------------------------------------------------------- configs

fn small_network(h: usize) -> NetworkConfig {
    NetworkConfig {
        critic_hidden: vec![h, h],
        flow_hidden: vec![h, h],
        policy_hidden: vec![h, h],
        discriminator_hidden: vec![h, h],
    }
}

fn bandit_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        gamma: 0.0,
        alpha: 1.0,
        steps: 1500,
        batch_size: 128,
        eval_episodes: 200,
        log_every: 100,
        lr: LearningRates { critic: 1e-3, flow: 1e-3, discriminator: 1e-3, policy: 1e-3 },
        network: small_network(32),
        ..TrainConfig::default()
    }
}

const REACHER_EPISODES: usize = 500;
const ONLINE_STEPS: usize = 4000;

fn reacher_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        gamma: 0.9,
        alpha: 0.3,
        steps: 2000,
        batch_size: 256,
        eval_episodes: 100,
        log_every: 100,
        lr: LearningRates { critic: 1e-3, flow: 1e-3, discriminator: 1e-3, policy: 1e-3 },
        network: small_network(64),
        ..TrainConfig::default()
    }
}

fn bandit_env() -> ContinuousCmdpEnv {
    ContinuousCmdpEnv::new(BANDIT_ID, Arc::new(ConfoundedBandit::default()))
}

fn reacher_env() -> ContinuousCmdpEnv {
    ContinuousCmdpEnv::new(REACHER_ID, Arc::new(TwoGoalReacher::default()))
}

fn final_success(m: &RunMetrics) -> f64 {
    m.last_eval().expect("final evaluation").result.success_rate
}

// ---------------------------------------------------------------- 1-4

fn gradient_oracle(_: &mut Shared) -> Verdict {
    let t = Instant::now();
    let r = check_random_networks(0, 60, 1e-5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        r.configs >= 50 && r.max_rel_error <= 1e-4 && secs < 30.0,
        format!("{} configs, max rel error {:.2e} <= 1e-4, {secs:.1}s < 30s", r.configs, r.max_rel_error),
    )
}

fn random_instance(i: u64) -> (usize, usize, usize) {
    let mut g = rng::stream(i, 11);
    (g.random_range(1..=5), g.random_range(1..=3), g.random_range(1..=3))
}

fn bound_validity(_: &mut Shared) -> Verdict {
    let t = Instant::now();
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..200 {
        let (s, x, u) = random_instance(i);
        let m = random_cmdp(s, x, u, 0.9, RewardBounds::new(0.0, 1.0), i);
        let nominal = m.analytic_nominal();
        for j in 0..20 {
            let pi = random_policy(s, x, &mut rng::stream(i, 1000 + j));
            let truth = m.true_policy_value(&pi).unwrap();
            let lo = solve_lower_bound(&BoundProblem::lower(nominal.clone(), pi, 0.0, 0.9)).unwrap();
            for (l, v) in lo.v.iter().zip(&truth) {
                worst = worst.max(l - v);
                if *l > v + 1e-8 {
                    violations += 1;
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        violations == 0 && secs < 120.0,
        format!("4000 (CMDP, policy) pairs, {violations} violations, max V_lower - V = {worst:.2e}, {secs:.1}s < 120s"),
    )
}

fn contraction_and_range(_: &mut Shared) -> Verdict {
    let gamma = 0.9;
    let mut worst_ratio: f64 = 0.0;
    let mut out_of_range = 0;
    for i in 0..200 {
        let (s, x, u) = random_instance(i);
        let m = random_cmdp(s, x, u, gamma, RewardBounds::new(0.0, 1.0), i);
        let pi = random_policy(s, x, &mut rng::stream(i, 2000));
        let t = solve_lower_bound(&BoundProblem::lower(m.analytic_nominal(), pi, 0.0, gamma)).unwrap();
        for w in t.residual_history.windows(2).skip(1) {
            if w[0] > 0.0 {
                worst_ratio = worst_ratio.max(w[1] / w[0]);
            }
        }
        let hi = 1.0 / (1.0 - gamma);
        out_of_range += t.q.iter().chain(&t.v).filter(|&&v| !(0.0..=hi).contains(&v)).count();
    }
    verdict(
        worst_ratio <= gamma + 1e-9 && out_of_range == 0,
        format!("max residual ratio {worst_ratio:.6} <= {:.9}, {out_of_range} values outside [0, 10]", gamma + 1e-9),
    )
}

fn form_equivalence(_: &mut Shared) -> Verdict {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (s, x, u) = random_instance(500 + i);
        let m = random_cmdp(s, x, u, 0.9, RewardBounds::new(0.0, 1.0), 500 + i);
        let pi = random_policy(s, x, &mut rng::stream(i, 3000));
        let p = BoundProblem::lower(m.analytic_nominal(), pi, 0.0, 0.9);
        let t = solve_lower_bound(&p).unwrap();
        let r = expectation_form_check(&p, &t, 1_000_000, i).unwrap();
        worst = worst.max(r.max_standard_errors);
    }
    verdict(worst <= 4.0, format!("20 instances at 1e6 samples, worst deviation {worst:.2} SE <= 4"))
}

// ---------------------------------------------------------------- 5-7

fn w1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn flow_fidelity(_: &mut Shared) -> Verdict {
    let env = ContinuousCmdpEnv::new("bimodal", Arc::new(ConfoundedBandit::symmetric()));
    let data = env.sample_trajectories(10_000, 0).unwrap();
    let actions: Vec<f64> = (0..data.len()).map(|i| data.action(i)[0]).collect();
    let mut v = VelocityField::new(1, 1, &[64, 64], &mut rng::stream(0, 0)).unwrap();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), v.net().params());
    let mut g = rng::stream(0, 1);
    let b = 256;
    let obs = Tensor::zeros(&[b, 1]);
    for _ in 0..3000 {
        let x: Vec<f64> = (0..b).map(|_| actions[g.random_range(0..actions.len())]).collect();
        let lg = flow_matching_loss(&v, &obs, &Tensor::from_vec(&[b, 1], x).unwrap(), &mut g).unwrap();
        adam.apply(v.net_mut().params_mut(), &lg.grads.0).unwrap();
    }
    let n = actions.len();
    let z = rng::standard_normal(&[n, 1], &mut rng::stream(0, 2));
    let samples = euler_sample(&v, &Tensor::zeros(&[n, 1]), &z, 10).unwrap().into_data();
    let dist = w1(&samples, &actions);

    let m = 4096;
    let obs = Tensor::zeros(&[m, 1]);
    let z = rng::standard_normal(&[m, 1], &mut rng::stream(0, 3));
    let runs: Vec<Vec<f64>> = [8, 16, 32, 64]
        .iter()
        .map(|&k| euler_integrate(&v, &obs, &z, k).unwrap().into_data())
        .collect();
    let gaps: Vec<f64> = runs
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() / m as f64)
        .collect();
    let ratios: Vec<f64> = gaps.windows(2).map(|g| g[1] / g[0]).collect();
    let halving = ratios.iter().all(|r| (0.35..=0.65).contains(r));
    verdict(
        dist <= 0.1 && halving,
        format!("W1 {dist:.4} <= 0.1, Euler gap ratios {ratios:.3?} within 0.5 +- 30%"),
    )
}

fn train_discriminator(seed: u64, class1: impl Fn(&mut LabRng) -> f64, class0: impl Fn(&mut LabRng) -> f64, steps: usize) -> Discriminator {
    let mut d = Discriminator::new(1, 1, &[64, 64], &mut rng::stream(seed, 0)).unwrap();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), d.net().params());
    let mut g = rng::stream(seed, 1);
    let b = 256;
    let obs = Tensor::zeros(&[b, 1]);
    for _ in 0..steps {
        let a = Tensor::from_vec(&[b, 1], (0..b).map(|_| class1(&mut g)).collect()).unwrap();
        let p = Tensor::from_vec(&[b, 1], (0..b).map(|_| class0(&mut g)).collect()).unwrap();
        let r = d.loss(&obs, &a, &p, 1.0).unwrap();
        adam.apply(d.net_mut().params_mut(), &r.grads.0).unwrap();
    }
    d
}

fn discriminator_sanity(_: &mut Shared) -> Verdict {
    let same = |g: &mut LabRng| g.random_range(-1.0..1.0);
    let d = train_discriminator(0, same, same, 2000);
    let xs: Vec<f64> = (0..4096).map(|i| -1.0 + 2.0 * i as f64 / 4095.0).collect();
    let w = d
        .factual_weight(&Tensor::zeros(&[xs.len(), 1]), &Tensor::from_vec(&[xs.len(), 1], xs).unwrap())
        .unwrap();
    let mean = w.iter().sum::<f64>() / w.len() as f64;

    let d = train_discriminator(1, |_| 0.9, |_| -0.9, 500);
    let n = 1000;
    let r = d
        .loss(&Tensor::zeros(&[n, 1]), &Tensor::filled(&[n, 1], 0.9), &Tensor::filled(&[n, 1], -0.9), 1.0)
        .unwrap();
    verdict(
        (0.4..=0.6).contains(&mean) && r.accuracy > 0.95,
        format!("identical classes mean output {mean:.3} in [0.4, 0.6], disjoint accuracy {:.3} > 0.95", r.accuracy),
    )
}

fn robust_algebra(_: &mut Shared) -> Verdict {
    let mut g = rng::stream(7, 0);
    let mut outside = 0;
    for _ in 0..10_000 {
        let n = g.random_range(2..=6);
        let q: Vec<Vec<f64>> = (0..n).map(|_| vec![g.random_range(-50.0..50.0)]).collect();
        let d = g.random_range(0.0..=1.0);
        let r = robust_q(&q, &[d])[0];
        let mean = q.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        let min = q.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * (1.0 + mean.abs());
        if r < min - tol || r > mean + tol {
            outside += 1;
        }
    }
    let env = bandit_env();
    let data = env.sample_trajectories(300, 0).unwrap();
    let mut fql = bandit_config(Mode::Fql, 3);
    fql.steps = 200;
    fql.log_every = 1;
    let cfql = TrainConfig { mode: Mode::Cfql, pinned_factual_weight: Some(1.0), ..fql.clone() };
    let (a, ma) = train_offline(&fql, &data, None).unwrap();
    let (b, mb) = train_offline(&cfql, &data, None).unwrap();
    let same_losses = ma.steps.len() == mb.steps.len()
        && ma.steps.iter().zip(&mb.steps).all(|(x, y)| {
            x.policy_loss.map(f64::to_bits) == y.policy_loss.map(f64::to_bits)
                && x.critic_losses == y.critic_losses
                && x.flow_loss.to_bits() == y.flow_loss.to_bits()
        });
    let same_params = a.policy_checksum() == b.policy_checksum() && a.critic_checksum() == b.critic_checksum();
    verdict(
        outside == 0 && same_losses && same_params,
        format!(
            "{outside}/10000 robust values outside [min, mean]; unit-weight CFQL vs FQL over 200 steps: losses identical {same_losses}, parameters identical {same_params}"
        ),
    )
}

// ---------------------------------------------------------------- 8-11

fn bandit_pessimism(_: &mut Shared) -> Verdict {
    let env = bandit_env();
    let b = ConfoundedBandit::default();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..SEEDS {
        let data = env.sample_trajectories(2000, seed).unwrap();
        let mut values = [0.0; 2];
        for (k, mode) in [Mode::Cfql, Mode::Fql].into_iter().enumerate() {
            let mut c = bandit_config(mode, seed);
            c.eval_episodes = 0;
            let (bundle, _) = train_offline(&c, &data, None).unwrap();
            let x = Actor::for_mode(mode, c.euler_steps).mode_action(&bundle, &[0.0]).unwrap()[0];
            values[k] = b.expected_reward(x.clamp(-1.0, 1.0));
        }
        if values[0] > values[1] {
            wins += 1;
        }
        pairs.push(format!("{:.2}/{:.2}", values[0], values[1]));
    }
    verdict(
        wins == SEEDS,
        format!("CFQL greedy arm truly better on {wins}/{SEEDS} seeds (true values CFQL/FQL: {})", pairs.join(" ")),
    )
}

fn offline_comparison(shared: &mut Shared) -> Verdict {
    let t = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, env, make) in [
        ("bandit", bandit_env(), bandit_config as fn(Mode, u64) -> TrainConfig),
        ("reacher", reacher_env(), reacher_config),
    ] {
        let episodes = if name == "bandit" { 2000 } else { REACHER_EPISODES };
        let mut success = [Vec::new(), Vec::new()];
        for seed in 0..SEEDS {
            let data = env.sample_trajectories(episodes, seed).unwrap();
            for (k, mode) in [Mode::Cfql, Mode::Fql].into_iter().enumerate() {
                let c = make(mode, seed);
                let (bundle, m) = train_offline(&c, &data, Some(&env)).unwrap();
                let s = final_success(&m);
                success[k].push(s);
                if name == "reacher" && mode == Mode::Cfql {
                    shared.reacher_cfql.push((bundle, c, data.clone(), s));
                }
            }
        }
        let (cm, cse) = mean_se(&success[0]);
        let (fm, fse) = mean_se(&success[1]);
        let ok = cm >= fm - fse;
        pass &= ok;
        lines.push(format!("{name}: CFQL {cm:.3}+-{cse:.3} vs FQL {fm:.3}+-{fse:.3}"));
        if name == "reacher" {
            let ratio = if fm > 0.0 { cm / fm } else { f64::INFINITY };
            pass &= ratio >= 1.2;
            lines.push(format!("reacher ratio {ratio:.2} >= 1.2"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    lines.push(format!("{secs:.0}s"));
    verdict(pass, lines.join("; "))
}

fn finetune_improves(shared: &mut Shared) -> Verdict {
    let env = reacher_env();
    if shared.reacher_cfql.is_empty() {
        for seed in 0..SEEDS {
            let data = env.sample_trajectories(REACHER_EPISODES, seed).unwrap();
            let c = reacher_config(Mode::Cfql, seed);
            let (bundle, m) = train_offline(&c, &data, Some(&env)).unwrap();
            let s = final_success(&m);
            shared.reacher_cfql.push((bundle, c, data, s));
        }
    }
    let offline: Vec<f64> = shared.reacher_cfql.iter().map(|r| r.3).collect();
    let (om, _) = mean_se(&offline);
    let mut pass = true;
    let mut lines = vec![format!("offline CFQL {om:.3}")];
    for objective in [OnlineObjective::Fql, OnlineObjective::Balanced] {
        let mut finals = Vec::new();
        for (bundle, c, data, _) in &shared.reacher_cfql {
            let mut bundle = bundle.clone();
            let mut c = c.clone();
            c.online = OnlineConfig { steps: ONLINE_STEPS, objective, eval_every: 0 };
            let (m, _) = train_online(&c, &mut bundle, &env, data).unwrap();
            finals.push(final_success(&m));
        }
        let (fm, fse) = mean_se(&finals);
        pass &= fm >= om;
        lines.push(format!("{objective:?} online {fm:.3}+-{fse:.3}"));
    }
    verdict(pass, lines.join("; "))
}

fn rerun_identical(_: &mut Shared) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        "env = \"two-goal-reacher-v0\"\nepisodes = 50\n[train]\nsteps = 100\nbatch_size = 64\neval_every = 50\neval_episodes = 20\n",
    )
    .unwrap();
    let run = |out: &Path, algo: &str| {
        Command::new(env!("CARGO_BIN_EXE_cfql"))
            .args(["train", "--algo", algo, "--seed", "5", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
            .status
            .success()
    };
    let mut same = true;
    let mut ran = true;
    for algo in ["cfql", "fql", "bc"] {
        let a = dir.path().join(format!("{algo}-a"));
        let b = dir.path().join(format!("{algo}-b"));
        ran &= run(&a, algo) && run(&b, algo);
        let read = |p: &Path| std::fs::read(p.join("metrics.csv")).unwrap_or_default();
        let (x, y) = (read(&a), read(&b));
        same &= !x.is_empty() && x == y;
    }
    verdict(ran && same, format!("cfql/fql/bc reruns exited ok {ran}, metrics.csv byte-identical {same}"))
}

type Criterion = (u32, &'static str, fn(&mut Shared) -> Verdict);

const CRITERIA: [Criterion; 11] = [
    (1, "gradient oracle", gradient_oracle),
    (2, "lower-bound validity", bound_validity),
    (3, "contraction and range", contraction_and_range),
    (4, "expectation-form equivalence", form_equivalence),
    (5, "flow-matching fidelity", flow_fidelity),
    (6, "discriminator sanity", discriminator_sanity),
    (7, "robust-Q algebra", robust_algebra),
    (8, "bandit pessimism witness", bandit_pessimism),
    (9, "offline CFQL vs FQL", offline_comparison),
    (10, "online fine-tuning", finetune_improves),
    (11, "rerun determinism", rerun_identical),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for (id, name, f) in CRITERIA {
        if !args.is_empty() && !args.iter().any(|a| a.parse() == Ok(id) || name.contains(a.as_str())) {
            continue;
        }
        let t = Instant::now();
        let v = f(&mut shared);
        let tag = if v.pass { "PASS" } else { "FAIL" };
        writeln!(out, "[{id:>2}] {tag} {name}: {} ({:.1}s)", v.detail, t.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
        if !v.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        writeln!(out, "failed criteria: {failed:?}").unwrap();
        std::process::exit(1);
    }
}
