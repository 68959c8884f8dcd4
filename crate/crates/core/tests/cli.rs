mod common;

use std::path::Path;
use std::process::{Command, Output};

use halos::analysis::RunReport;
use halos::config::RunConfig;

use common::config_path;

const SHORT: &[&str] = &["--set", "stop.sim_time=300", "--set", "workload.dim=16"];

fn halos(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_halos"))
        .args(args)
        .env("HALOS_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn shipped_configs_load() {
    for name in [
        "reference_quadratic.toml",
        "reference_charlm.toml",
        "noniid_charlm.toml",
    ] {
        let cfg = RunConfig::load(config_path(name), &[]).unwrap();
        cfg.validate().unwrap();
    }
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("reference_quadratic.toml");
    let mut args = vec!["run", "-c", cfg.as_str(), "--set", "output.write_trace=true"];
    args.extend_from_slice(SHORT);
    let first = halos(&args, &dir.path().join("a"));
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let second = halos(&args, &dir.path().join("b"));
    assert_eq!(code(&second), 0);
    for f in [
        "report.json",
        "loss_curve.csv",
        "breakdown.csv",
        "config.toml",
        "trace.ndjson.gz",
    ] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    let a = std::fs::read(dir.path().join("a/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/report.json")).unwrap();
    assert_eq!(a, b);

    let saved = dir.path().join("a/config.toml");
    let trace = dir.path().join("a/trace.ndjson.gz");
    let replayed = halos(
        &[
            "replay",
            "-c",
            saved.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ],
        &dir.path().join("c"),
    );
    assert_eq!(code(&replayed), 0, "{}", String::from_utf8_lossy(&replayed.stderr));
    let c = std::fs::read(dir.path().join("c/report.json")).unwrap();
    assert_eq!(a, c);
    let report: RunReport = serde_json::from_slice(&a).unwrap();
    assert_eq!(report.config_hash, RunConfig::load(&saved, &[]).unwrap().hash());
}

#[test]
fn replay_refuses_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("reference_quadratic.toml");
    let mut args = vec!["run", "-c", cfg.as_str(), "--set", "output.write_trace=true"];
    args.extend_from_slice(SHORT);
    assert_eq!(code(&halos(&args, dir.path())), 0);
    let trace = dir.path().join("trace.ndjson.gz");
    let mut replay = vec![
        "replay",
        "-c",
        cfg.as_str(),
        "--trace",
        trace.to_str().unwrap(),
        "--set",
        "strategy.k=4",
    ];
    replay.extend_from_slice(SHORT);
    let o = halos(&replay, &dir.path().join("r"));
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn compare_writes_one_report_per_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("reference_quadratic.toml");
    let mut args = vec!["compare", "-c", cfg.as_str(), "--strategy", "halos,diloco"];
    args.extend_from_slice(SHORT);
    let o = halos(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("halos/report.json").exists());
    assert!(dir.path().join("diloco/report.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn sweep_writes_fixed_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("reference_quadratic.toml");
    let mut args = vec!["sweep", "-c", cfg.as_str(), "--sweep", "beta_g=0.3,0.5"];
    args.extend_from_slice(SHORT);
    let o = halos(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("axis,value,final_loss,time_to_loss,tokens_to_loss,diverged\n"));
    assert!(dir.path().join("beta_g=0.3/report.json").exists());
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("reference_quadratic.toml");

    let bad = halos(&["run", "-c", cfg.as_str(), "--set", "alpha=1.5"], dir.path());
    assert_eq!(code(&bad), 3);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("alpha"));

    let missing = halos(&["run", "-c", "/nonexistent/config.toml"], dir.path());
    assert_eq!(code(&missing), 4);

    let mut diverging = vec![
        "run",
        "-c",
        cfg.as_str(),
        "--set",
        "inner.optimizer={kind=\"sgd\"}",
        "--set",
        "lr=1e306",
    ];
    diverging.extend_from_slice(SHORT);
    let o = halos(&diverging, &dir.path().join("div"));
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("div/report.json").exists());
}

#[test]
fn bound_and_breakdown_print_values() {
    let dir = tempfile::tempdir().unwrap();
    let o = halos(&["bound", "--tradeoff", "0.5"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "64");

    let o = halos(
        &["breakdown", "--sim-time", "600", "-o", dir.path().to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("strategy,compute_fraction,comm_fraction,stall_fraction"));
    assert_eq!(text.lines().count(), 6);
    assert!(dir.path().join("breakdown.csv").exists());
}
