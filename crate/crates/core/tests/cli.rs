use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tc")).args(args).current_dir(dir).output().unwrap()
}

fn ok_json(dir: &Path, args: &[&str]) -> Value {
    let out = tc(dir, args);
    assert!(out.status.success(), "tc {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn bound_theorem2_reference_value() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(dir.path(), &["bound", "--theorem", "2", "--dims", "64,64,64", "--rank", "1"]);
    assert_eq!(v["bound"], 8856);
    assert_eq!(v["theorem"], 2);
}

#[test]
fn bound_margin_uses_observed_count() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(
        dir.path(),
        &["bound", "--theorem", "2", "--dims", "64,64,64", "--rank", "1", "--observed", "9000"],
    );
    assert_eq!(v["margin"], 144);
}

#[test]
fn generated_phantom_rank_is_estimated() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = tc(d, &["gen", "--dims", "16,16,16", "--ranks", "2,2,2", "--seed", "5", "--out", "x.raw"]);
    assert!(gen.status.success());
    assert!(d.join("x.raw.json").exists());
    let v = ok_json(d, &["rank", "--in", "x.raw"]);
    assert_eq!(v["ranks"], serde_json::json!([2, 2, 2]));
}

#[test]
fn zero_iterations_report_not_converged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(tc(d, &["gen", "--dims", "8,8,8", "--ranks", "2,2,2", "--out", "x.raw"]).status.success());
    assert!(tc(d, &["mask", "--dims", "8,8,8", "--law", "uniform", "--n", "300", "--seed", "1", "--out", "m.txt"])
        .status
        .success());
    assert!(tc(d, &["corrupt", "--in", "x.raw", "--mask", "m.txt", "--out-y", "y.raw", "--out-e", "e.raw"])
        .status
        .success());
    let v = ok_json(
        d,
        &["solve", "--y", "y.raw", "--mask", "m.txt", "--ranks", "2,2,2", "--max-iters", "0", "--out-x", "xh.raw", "--out-e", "eh.raw"],
    );
    assert_eq!(v["converged"], false);
    assert_eq!(v["iterations"], 0);
    assert!(d.join("xh.raw").exists());
}

#[test]
fn zslice_mask_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = tc(d, &["mask", "--dims", "4,4,6", "--law", "zslice", "--stride", "3", "--offset", "1", "--out", "m.txt"]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(d.join("m.txt")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# dims 4 4 6 law"));
    let idx: Vec<usize> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(idx.len(), 32);
    assert!(idx.iter().all(|i| i % 6 == 1 || i % 6 == 4));
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = tc(d, &["rank", "--in", "nope.raw"]);
    assert!(!missing.status.success());
    let v: Value = serde_json::from_slice(&missing.stderr).unwrap();
    assert!(v["error"].is_string());
    assert!(v["message"].is_string());

    let usage = tc(d, &["gen", "--dims", "4,4"]);
    assert!(!usage.status.success());
    let v: Value = serde_json::from_slice(&usage.stderr).unwrap();
    assert_eq!(v["error"], "usage");

    let bad_ranks = tc(d, &["gen", "--dims", "4,4,4", "--ranks", "5,1,1", "--out", "x.raw"]);
    assert!(!bad_ranks.status.success());
    assert!(!d.join("x.raw").exists());
}

#[test]
fn phase_writes_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let grid = serde_json::json!({
        "sampling_fractions": [0.3, 0.8],
        "sparse_fractions": [0.0, 0.05],
        "gaussian_sigmas": [0.0],
        "trials_per_cell": 2,
        "seed_base": 3
    });
    std::fs::write(d.join("grid.json"), grid.to_string()).unwrap();
    let v = ok_json(
        d,
        &["phase", "--grid", "grid.json", "--dims", "6,6,6", "--ranks", "1,1,1", "--out", "phase.csv", "--max-iters", "50"],
    );
    assert_eq!(v["rows"], 8);
    let csv = std::fs::read_to_string(d.join("phase.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4 * 2 + 1);
    assert!(csv.starts_with("sampling_fraction,sparse_fraction,sigma,trial,"));
}
