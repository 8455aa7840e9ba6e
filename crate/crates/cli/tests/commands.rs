use std::fs;
use std::path::{Path, PathBuf};

use cumff::diagnostics::paired_bootstrap;
use cumff::io::predictions::load_predictions;
use cumff_cli::run_command;

const SMALL: &str = r#"
seed = 4

[model]
blocks = 2
hidden_dim = 8
output_dim = 4

[train]
epochs = 3
batch_size = 16
hnm_k_first = 2
hnm_k_last = 2

[data]
classes = 3
dim = 6
per_class = 30
seed = 4
"#;

fn cli(args: &[&str]) -> i32 {
    run_command(std::iter::once("cumff").chain(args.iter().copied()))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

#[test]
fn train_with_one_epoch_writes_one_metrics_line() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    assert_eq!(cli(&["train", path(&cfg), "--out", path(&out), "--epochs", "1"]), 0);
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.starts_with("epoch=1 "));
    assert!(out.join("checkpoint.bin").exists());
    assert!(out.join("predictions.txt").exists());
}

#[test]
fn trained_checkpoint_feeds_the_analysis_commands() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    assert_eq!(cli(&["train", path(&cfg), "--out", path(&out)]), 0);
    let ck = out.join("checkpoint.bin");
    assert_eq!(cli(&["verify-locality", path(&cfg), "--checkpoint", path(&ck)]), 0);
    assert_eq!(cli(&["diagnose", path(&ck), path(&cfg)]), 0);
    let pred = dir.path().join("again.txt");
    assert_eq!(cli(&["predict", path(&ck), path(&cfg), "--out", path(&pred)]), 0);
    // predicting with the saved model reproduces the predictions written by train
    assert_eq!(fs::read(&pred).unwrap(), fs::read(out.join("predictions.txt")).unwrap());
}

#[test]
fn bootstrap_of_identical_files_succeeds() {
    let (dir, cfg) = setup();
    let out = dir.path().join("run");
    assert_eq!(cli(&["train", path(&cfg), "--out", path(&out), "--epochs", "1"]), 0);
    let p = out.join("predictions.txt");
    assert_eq!(cli(&["bootstrap", path(&p), path(&p), "--resamples", "1000"]), 0);
    let set = load_predictions(&p).unwrap();
    let report = paired_bootstrap(&set, &set, 1000, 0).unwrap();
    assert_eq!((report.ci_low, report.ci_high, report.disagreement), (0.0, 0.0, 0.0));
}

#[test]
fn theorem_audit_passes() {
    assert_eq!(cli(&["verify-theorems"]), 0);
}

#[test]
fn list_and_help_exit_cleanly() {
    assert_eq!(cli(&["list"]), 0);
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn bad_invocations_exit_nonzero() {
    assert_ne!(cli(&["no-such-command"]), 0);
    assert_ne!(cli(&[]), 0);
    assert_ne!(cli(&["train", "/nonexistent/config.toml"]), 0);
    assert_ne!(cli(&["bootstrap", "/nonexistent/a", "/nonexistent/b"]), 0);
    let (_dir, cfg) = setup();
    assert_ne!(cli(&["train", path(&cfg), "--preset", "no-such-preset"]), 0);
}
