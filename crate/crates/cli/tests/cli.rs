use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sigmanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigmanet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const SMALL_STUDY: &str = r#"{
  "target": { "kind": "abs_sum", "dim": 1 },
  "p": 1.0,
  "c": 1.0,
  "noise_sd": 0.1,
  "n_grid": [20, 40, 80],
  "repetitions": 3,
  "mode": "planted",
  "seed": 5,
  "subnets": 12,
  "training": { "step_size": 0.05, "steps": 40 },
  "eval_points": 500
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn rate_study_csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_STUDY);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (path, seed) in [(&a, "11"), (&b, "11"), (&c, "12")] {
        let out = sigmanet(&["rate-study", "--config", &cfg, "--seed", seed, "--output", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let summary = stdout_json(&out);
        assert_eq!(summary["failed_cells"], 0);
    }
    let (a, b, c) = (fs::read(a).unwrap(), fs::read(b).unwrap(), fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,rep,seed,l2_error,stderr,wall_ms"));
    assert_eq!(lines.count(), 9);
}

#[test]
fn rate_study_summary_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_STUDY);
    let summary = dir.path().join("summary.json");
    let out = sigmanet(&["rate-study", "--config", &cfg, "--summary", summary.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("n,rep,seed"));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert!(s["slope"].is_f64());
    assert!((s["theoretical_exponent"].as_f64().unwrap() + 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn verify_all_passes_and_is_stable() {
    let a = sigmanet(&["verify", "--suite", "all"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stdout));
    let v = stdout_json(&a);
    assert_eq!(v["passed"], true);
    let b = sigmanet(&["verify", "--suite", "all"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn verify_detects_injected_gradient_fault() {
    let out = sigmanet(&["verify", "--suite", "opt", "--seed", "4", "--inject-gradient-fault", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let v = stdout_json(&out);
    assert_eq!(v["passed"], false);
    let clean = sigmanet(&["verify", "--suite", "opt", "--seed", "4"]);
    assert!(clean.status.success());
}

#[test]
fn covering_bound_plug_in() {
    let out = sigmanet(&[
        "covering-bound", "--alpha", "1", "--beta", "1", "--a", "1", "--b", "1", "--c", "1", "--depth", "1", "--d",
        "1", "--k", "1", "--epsilon", "0.5", "--p-norm", "2",
    ]);
    assert!(out.status.success());
    let v = stdout_json(&out)["log_bound"].as_f64().unwrap();
    assert!((v - 3.0 * 4f64.ln()).abs() < 1e-12);

    let bad = sigmanet(&[
        "covering-bound", "--alpha", "1", "--beta", "1", "--a", "1", "--b", "1", "--c", "1", "--depth", "1", "--d",
        "1", "--k", "1", "--epsilon", "1.5",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn fit_reports_risk_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_STUDY);
    let out = sigmanet(&["fit", "--config", &cfg, "--n", "60"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["n"], 60);
    assert!(v["final_risk"].as_f64().unwrap() < v["initial_risk"].as_f64().unwrap());
    assert_eq!(v["schedule"]["steps_override"], 40);
}

#[test]
fn build_approx_writes_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"target": {"kind": "sine_ridge", "omega": [2.0], "phase": 0.0}, "p": 2.0, "c": 8.0,
            "n_grid": [10], "repetitions": 1, "mode": "planted", "subnets": 1}"#,
    );
    let net = dir.path().join("net.json");
    let out = sigmanet(&["build-approx", "--config", &cfg, "--cells", "4", "--output", net.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["depth"], 2);
    assert_eq!(v["width"], 50);
    let sup = v["sup_error"].as_f64().unwrap();
    assert!(sup > 0.0 && sup < 1.0);
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(net).unwrap()).unwrap();
    assert_eq!(w["topology"]["subnets"], v["subnets"]);
}

#[test]
fn capacity_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"target": {"kind": "sine_ridge", "omega": [2.0], "phase": 0.0}, "p": 2.0, "c": 8.0,
            "n_grid": [10], "repetitions": 1, "mode": "planted", "subnets": 1}"#,
    );
    let out = sigmanet(&["build-approx", "--config", &cfg, "--cells", "4", "--width", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"target": {"kind": "abs_sum", "dim": 1}, "p": 1.0}"#);
    let out = sigmanet(&["rate-study", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}
