//! End-to-end tests of the `blockmdp` binary: outputs, determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn blockmdp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockmdp"))
        .args(args)
        .env("BLOCKMDP_OUT", out)
        .output()
        .expect("binary runs")
}

fn only_subdir(dir: &Path, prefix: &str) -> std::path::PathBuf {
    let mut found: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(found.len(), 1, "{found:?}");
    found.pop().unwrap()
}

#[test]
fn coeffs_reports_comb_lock_coverability() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockmdp(dir.path(), &["coeffs", "--env", "comb-lock", "--horizon", "3", "--m-good", "6", "--m-bad", "24"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((doc["c_cov"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!(dir.path().join("coeffs-comb_lock.json").exists());
}

#[test]
fn psdp_run_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "psdp", "--env", "psdp-simple", "--gamma", "0.01", "--seeds", "200"];
    let first = blockmdp(dir.path(), &args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8(first.stdout).unwrap();
    assert!(stdout.lines().next().unwrap().split(',').any(|c| c == "failure_frequency"));
    let run_dir = only_subdir(dir.path(), "run-psdp-");
    let json1 = std::fs::read(run_dir.join("run.json")).unwrap();
    let csv1 = std::fs::read(run_dir.join("seeds.csv")).unwrap();
    let second = blockmdp(dir.path(), &args);
    assert!(second.status.success());
    assert_eq!(json1, std::fs::read(run_dir.join("run.json")).unwrap());
    assert_eq!(csv1, std::fs::read(run_dir.join("seeds.csv")).unwrap());
    let record: serde_json::Value = serde_json::from_slice(&json1).unwrap();
    assert_eq!(record["seeds"].as_array().unwrap().len(), 200);
    let seeds: Vec<u64> = record["seeds"].as_array().unwrap().iter().map(|s| s["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, (0..200).collect::<Vec<_>>());
}

#[test]
fn repro_psdp_lb_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = blockmdp(dir.path(), &["repro", "psdp-lb"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("repro/psdp-lb.json").exists());
}

#[test]
fn env_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let made = blockmdp(dir.path(), &["env", "make", "--env", "psdp-highway", "--horizon", "3", "--c-push", "15", "--eps-stat", "0.001"]);
    assert!(made.status.success());
    let path = dir.path().join("env-psdp_highway.json");
    let out = blockmdp(dir.path(), &["run", "psdp-worstcase", "--env-file", path.to_str().unwrap(), "--band", "0.001"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(only_subdir(dir.path(), "run-psdp-worstcase-").join("run.json")).unwrap())
            .unwrap();
    assert!(record["seeds"][0]["suboptimality"].as_f64().unwrap() >= 0.256);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = [0]\nmystery = 1\n[env]\ngenerator = \"psdp_simple\"\ngamma = 0.01\n[algorithm]\nname = \"psdp\"\nn = 10\n").unwrap();
    let out = blockmdp(dir.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = blockmdp(dir.path(), &["run", "plhr", "--env", "psdp-simple", "--gamma", "0.01", "--eps", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_confidence_set_exits_with_three() {
    // Seed 5 of the stochastic end-to-end setting decodes one row into disjoint
    // marginal balls.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plhr.toml");
    std::fs::write(
        &cfg,
        r#"seeds = [5]
env_per_seed = true

[env]
generator = "random"
states = 2
actions = 2
horizon = 2
obs_per_state = 4
seed = 0

[algorithm]
name = "plhr"
eps = 0.1
n_reset = 40
n_dec = 60
n_mc = 400
eps_tol = 0.06
eps_dec = 0.07
"#,
    )
    .unwrap();
    let out = blockmdp(dir.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(only_subdir(dir.path(), "run-plhr-").join("run.json")).unwrap()).unwrap();
    assert!(record["seeds"][0]["error"].as_str().unwrap().contains("confidence set is empty"));
}
