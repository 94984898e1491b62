use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn ramp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ramp"))
        .args(args)
        .output()
        .expect("ramp binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "ramp failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// The mini-chain grader is a binary of the core crate and must sit next to
/// `ramp`; build it when this package is tested on its own.
fn ensure_grader() {
    let bin_dir = Path::new(env!("CARGO_BIN_EXE_ramp")).parent().unwrap();
    let grader = bin_dir.join(format!(
        "ramp-minichain-grader{}",
        std::env::consts::EXE_SUFFIX
    ));
    if grader.exists() {
        return;
    }
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let status = Command::new(cargo)
        .args(["build", "-p", "ramp-core", "--bin", "ramp-minichain-grader"])
        .status()
        .expect("cargo runs");
    assert!(
        status.success() && grader.exists(),
        "could not build the mini-chain grader"
    );
}

#[test]
fn ingest_table_prints_replayed_statistics() {
    let data = core_dir().join("data");
    let out = ramp(&[
        "ingest-table",
        "--csv",
        data.join("leaderboard.csv").to_str().unwrap(),
        "--extras",
        data.join("extras.csv").to_str().unwrap(),
    ]);
    let text = stdout(&out);
    assert!(text.contains("| 1 | Opus-4.7 |"));
    assert!(text.contains("rows: 15"));
    assert!(text.contains("completion rates (%): [100.00, 46.67, 26.67, 13.33, 0.00, 20.00]"));
    assert!(text.contains("baseline MR recomputed: 23.38 (reported 23.38)"));
}

#[test]
fn ingested_records_feed_the_report_command() {
    let dir = TempDir::new().unwrap();
    let runs = dir.path().join("runs");
    let data = core_dir().join("data");
    stdout(&ramp(&[
        "ingest-table",
        "--csv",
        data.join("leaderboard.csv").to_str().unwrap(),
        "--out",
        runs.to_str().unwrap(),
    ]));
    let report = dir.path().join("board.csv");
    let text = stdout(&ramp(&[
        "report",
        "--runs",
        runs.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        report.to_str().unwrap(),
    ]));
    assert_eq!(std::fs::read_to_string(&report).unwrap(), text);
    // Fifteen models plus the baseline, all loaded as ordinary runs.
    assert_eq!(text.lines().count(), 17);
    assert!(text.lines().nth(1).unwrap().starts_with("1,Opus-4.7,"));
}

#[test]
fn compare_modes_shows_resurrection_effect() {
    ensure_grader();
    let dir = TempDir::new().unwrap();
    let chain = core_dir().join("workloads/mini-chain");
    let text = stdout(&ramp(&[
        "compare-modes",
        "--profile",
        chain.join("profiles/fail-task-1.json").to_str().unwrap(),
        "--manifest",
        chain.join("manifest.json").to_str().unwrap(),
        "--work-dir",
        dir.path().to_str().unwrap(),
    ]));
    assert!(text.contains("resurrections in mode 1: 1 [1]"));
    assert!(text.contains("| 2 | 90.00 | 10.00 | +80.00 |"));
    assert!(text.contains("MR: mode 1 76.32, mode 2 34.00"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn run_saves_a_record_the_report_can_rank() {
    ensure_grader();
    let dir = TempDir::new().unwrap();
    let chain = core_dir().join("workloads/mini-chain");
    let runs = dir.path().join("runs");
    let backend = format!("sim:{}", chain.join("profiles/all-pass.json").display());
    stdout(&ramp(&[
        "run",
        "--manifest",
        chain.join("manifest.json").to_str().unwrap(),
        "--backend",
        &backend,
        "--mode",
        "2",
        "--out",
        runs.to_str().unwrap(),
        "--work-dir",
        dir.path().join("ws").to_str().unwrap(),
        "--pricing",
        core_dir().join("data/pricing.json").to_str().unwrap(),
        "--run-id",
        "cli-run",
    ]));
    assert!(runs.join("cli-run.json").exists());
    assert!(runs.join("cli-run.trace.jsonl").exists());
    let text = stdout(&ramp(&[
        "report",
        "--runs",
        runs.to_str().unwrap(),
        "--format",
        "json",
    ]));
    let board: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(board["entries"][0]["run_id"], "cli-run");
    assert_eq!(board["entries"][0]["rank"], 1);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let out = ramp(&["ingest-table", "--csv", "/nonexistent.csv"]);
    assert!(!out.status.success());
    let out = ramp(&["report", "--runs", ".", "--format", "yaml"]);
    assert!(!out.status.success());
    let chain = core_dir().join("workloads/mini-chain/manifest.json");
    let out = ramp(&[
        "simulate",
        "--profile",
        "/nonexistent.json",
        "--manifest",
        chain.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
