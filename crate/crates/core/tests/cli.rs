use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn odedbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odedbn")).args(args).output().expect("binary runs")
}

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn compile_reports_nodes_and_writes_dot() {
    let dir = tempfile::tempdir().unwrap();
    let model = models().join("lorenz.model");
    let out = odedbn(&["compile", model.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("10 nodes (3 state, 3 delta, 3 parameter, 1 observed)"), "{stdout}");
    let dot = std::fs::read_to_string(dir.path().join("lorenz.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
}

#[test]
fn malformed_model_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.model");
    std::fs::write(&bad, "model bad\nstate X = 1\ndX/dt = X *\n").unwrap();
    let out = odedbn(&["compile", bad.to_str().unwrap(), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("bad.model:3:"), "{}", text(&out.stderr));
}

#[test]
fn unknown_benchmark_case_exits_2() {
    let out = odedbn(&["benchmark", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("pif45, lotka, stc, lorenz"));
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("run.cfg");
    let model = models().join("lotka.model");
    std::fs::write(
        &cfg,
        format!("model = {}\nparticles = 500\nseed = 7\noutput = out\n{extra}", model.display()),
    )
    .unwrap();
    cfg
}

#[test]
fn repeated_infer_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = odedbn(&["infer", cfg.to_str().unwrap(), "--workers", workers]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        outputs.push(std::fs::read(dir.path().join("out/summaries.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let summaries = text(&outputs[0]);
    assert!(summaries.starts_with("time,S_mean,S_std,W_mean,W_std,alpha_mean,alpha_std"));
    assert!(dir.path().join("out/plot_S.csv").exists());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].is_null());
}

#[test]
fn empty_span_writes_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t_end = 0\n");
    let out = odedbn(&["infer", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let summaries = std::fs::read_to_string(dir.path().join("out/summaries.csv")).unwrap();
    assert_eq!(summaries.lines().count(), 2);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "colour = blue\n");
    let out = odedbn(&["infer", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("colour"));
}

#[test]
fn benchmark_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = odedbn(&["benchmark", "pif45", "--particles", "2000", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    for f in ["reference.csv", "pif45_PIF.csv", "summaries.csv", "plot_PIF.csv", "metrics.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap() < 0.15);
    assert_eq!(metrics["reported_rmse"].as_f64(), Some(0.07));
}
