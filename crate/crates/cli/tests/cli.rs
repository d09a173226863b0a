use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const TINY: &str = r#"
env = "confounded-bandit-v0"
episodes = 100

[train]
steps = 30
batch_size = 32
log_every = 5
eval_episodes = 10

[train.network]
critic_hidden = [16]
flow_hidden = [16]
policy_hidden = [16]
discriminator_hidden = [16]
"#;

fn cfql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfql")).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn list_envs_prints_the_registry() {
    let o = cfql(&["list-envs"]);
    assert!(o.status.success());
    let s = text(&o.stdout);
    for spec in cfql_core::envs::registry() {
        assert!(s.contains(spec.id), "{s}");
    }
    let o = cfql(&["list-envs", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), cfql_core::envs::registry().len());
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [&["frobnicate"][..], &["gradcheck", "--bogus"]] {
        let o = cfql(args);
        assert_eq!(o.status.code(), Some(2));
        assert!(text(&o.stderr).contains("Usage"), "{}", text(&o.stderr));
    }
    assert_eq!(cfql(&["train", "--algo", "sac", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn missing_config_is_a_runtime_failure_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = cfql(&["train", "--algo", "cfql", "--config", "missing.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = text(&o.stderr);
    assert!(err.contains("missing.json") && err.contains("train"), "{err}");
}

#[test]
fn gradcheck_passes_its_threshold() {
    let o = cfql(&["gradcheck", "--seed", "0"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("max relative gradient error"));
}

#[test]
fn bounds_on_the_shipped_chain_and_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    let o = cfql(&["bounds", "--cmdp", cfql_core::envs::CHAIN_ID, "--policy", "uniform", "--json", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let v = json(&out);
    assert_eq!(v["valid"], true);
    assert!(!v["residual_history"].as_array().unwrap().is_empty());

    let m = cfql_core::envs::confounded_chain();
    let file = dir.path().join("chain.json");
    fs::write(&file, serde_json::to_string(&m).unwrap()).unwrap();
    let policy = dir.path().join("pi.json");
    let probs: Vec<f64> = (0..m.states).flat_map(|_| {
        let mut row = vec![0.0; m.actions];
        row[0] = 1.0;
        row
    }).collect();
    fs::write(
        &policy,
        serde_json::json!({"states": m.states, "actions": m.actions, "probs": probs}).to_string(),
    )
    .unwrap();
    let o = cfql(&["bounds", "--cmdp", file.to_str().unwrap(), "--policy", policy.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], true);
}

#[test]
fn gen_data_reports_the_file_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.bin");
    let csv = dir.path().join("d.csv");
    let o = cfql(&[
        "gen-data", "--env", "two-goal-reacher-v0", "--episodes", "5", "--seed", "3",
        "--out", out.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let hash = format!("{:x}", Sha256::digest(fs::read(&out).unwrap()));
    assert!(text(&o.stdout).contains(&hash));
    let data = cfql_core::cmdp::TransitionDataset::load(&out).unwrap();
    assert_eq!(data.len(), 50);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 51);
}

#[test]
fn train_eval_finetune_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = cfql(&["train", "--algo", "cfql", "--config", &config, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    for f in ["config.json", "manifest.json", "metrics.csv", "result.json", "dataset.bin", "checkpoints/final.ckpt"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());

    let manifest = json(&a.join("manifest.json"));
    let hash = format!("{:x}", Sha256::digest(fs::read(a.join("dataset.bin")).unwrap()));
    assert_eq!(manifest["dataset"]["sha256"], hash.as_str());
    assert_eq!(manifest["config"]["train"]["seed"], 7);
    assert_eq!(manifest["config"]["train"]["mode"], "cfql");
    assert!(manifest["finished_unix"].is_u64());

    let result = json(&a.join("result.json"));
    assert_eq!(result["gradient_steps"], 30);
    assert_eq!(result["final_eval"]["episodes"], 10);

    let ckpt = a.join("checkpoints/final.ckpt");
    let o = cfql(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--episodes", "10"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let e: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(e["success_rate"], result["final_eval"]["success_rate"]);

    let ft = dir.path().join("ft");
    let o = cfql(&[
        "finetune", "--ckpt", ckpt.to_str().unwrap(), "--env", "confounded-bandit-v0",
        "--steps", "12", "--objective", "balanced", "--out", ft.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let r = json(&ft.join("result.json"));
    assert_eq!(r["gradient_steps"], 42);
    assert!(r["initial_eval"]["success_rate"].is_f64());
    assert_eq!(json(&ft.join("config.json"))["train"]["online"]["objective"], "balanced");

    let o = cfql(&[
        "finetune", "--ckpt", ckpt.to_str().unwrap(), "--env", "two-goal-reacher-v0",
        "--steps", "1", "--out", dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replaying_the_recorded_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let a = dir.path().join("a");
    let o = cfql(&["train", "--algo", "fql", "--config", &config, "--seed", "2", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let replay = dir.path().join("b");
    let o = cfql(&[
        "train", "--algo", "fql", "--config", a.join("config.json").to_str().unwrap(),
        "--seed", "2", "--out", replay.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(replay.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("config.json")).unwrap(), fs::read(replay.join("config.json")).unwrap());
}

#[test]
fn single_value_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let out = dir.path().join("sweep");
    let o = Command::new(env!("CARGO_BIN_EXE_cfql"))
        .args(["sweep", "--config", &config, "--axis", "ensembles", "--values", "2", "--seeds", "2", "--out"])
        .arg(&out)
        .env("CFQL_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2, "{table}");
    assert!(lines[0].starts_with("ensembles,runs,mean_success"));
    assert!(lines[1].starts_with("2,2,"));
    assert_eq!(fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 3);
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_cfql"))
        .args(["sweep", "--config", &config, "--axis", "disc-coef", "--values", "1", "--seeds", "1", "--out"])
        .arg(dir.path().join("s"))
        .env("CFQL_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("CFQL_THREADS"));
}
