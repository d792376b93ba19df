use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn ltc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltc")).args(args).output().expect("spawn ltc")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn small_config(dir: &Path, algorithm: Value, feedback: &str) -> PathBuf {
    write_json(
        dir,
        "config.json",
        &json!({
            "instance": data("instances/stochastic.json"),
            "algorithm": algorithm,
            "T": 2000,
            "delta": 0.05,
            "feedback": feedback,
            "seeds": [0, 1, 2],
            "master_seed": 7,
        }),
    )
}

#[test]
fn oracle_reports_optimum_and_margin() {
    let out = ltc(&["oracle", "--instance", data("instances/stochastic.json").to_str().unwrap()]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!((v["opt"]["value"].as_f64().unwrap() - 0.6).abs() < 1e-9);
    assert!((v["rho"]["value"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(v["regime"]["stochastic_rewards"], true);
    assert!(v["saddle_gap"].as_f64().unwrap().abs() < 1e-2);
}

#[test]
fn run_writes_traces_and_summary_then_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({"kind": "known_rho", "rho_hat": 0.5}), "full");
    let out_dir = dir.path().join("out");
    let out = ltc(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--parallel",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["seeds"], 3);
    for seed in 0..3 {
        let trace = std::fs::read_to_string(out_dir.join(format!("trace_seed_{seed}.csv"))).unwrap();
        let mut lines = trace.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,phase,x_index,f,g_1,g_2,lambda_1,lambda_2,cumV_max"
        );
        assert_eq!(lines.count(), 2000);
    }
    let summary = out_dir.join("summary.json");
    let out = ltc(&["certify", "--summary", summary.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["passed"], true);

    let mut doctored: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    for seed in doctored["seeds"].as_array_mut().unwrap() {
        seed["violation"] = json!(1e9);
        seed["regret"] = json!(1e9);
    }
    let bad = write_json(dir.path(), "doctored.json", &doctored);
    let out = ltc(&["certify", "--summary", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stdout_json(&out)["passed"], false);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({"kind": "unknown_rho"}), "bandit");
    let trace = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = ltc(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--parallel",
            threads,
        ]);
        assert!(out.status.success());
        std::fs::read(out_dir.join("trace_seed_1.csv")).unwrap()
    };
    assert_eq!(trace("a", "1"), trace("b", "3"));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_json(
        dir.path(),
        "bad.json",
        &json!({
            "instance": data("instances/stochastic.json"),
            "algorithm": {"kind": "known_rho", "rho_hat": 0.5},
            "T": 100,
            "delta": 1.5,
            "seeds": [0],
        }),
    );
    let out = ltc(&["run", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn estimate_rho_lists_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({"kind": "unknown_rho"}), "full");
    let out = ltc(&["estimate-rho", "--config", config.to_str().unwrap()]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert_eq!(v["T0"], 45);
    let estimates = v["estimates"].as_array().unwrap();
    assert_eq!(estimates.len(), 3);
    for e in estimates {
        let rho_hat = e["rho_hat"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&rho_hat));
    }
}

#[test]
fn sweep_fits_one_point_per_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({"kind": "known_rho", "rho_hat": 0.5}), "full");
    let out = ltc(&["sweep", "--config", config.to_str().unwrap(), "--T", "500,1000,2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["median_violation"].as_array().unwrap().len(), 3);
    assert!(v["regret_fit"]["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn auction_runs_and_certifies() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Value =
        serde_json::from_str(&std::fs::read_to_string(data("configs/auction_budget.json")).unwrap()).unwrap();
    config["T"] = json!(2000);
    config["seeds"] = json!([0, 1]);
    let path = write_json(dir.path(), "auction.json", &config);
    let out_dir = dir.path().join("out");
    let out = ltc(&["auction", "--config", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("trace_seed_0.csv").exists());
}
