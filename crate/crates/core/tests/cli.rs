use std::path::Path;
use std::process::{Command, Output};

fn scoregrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scoregrad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_TRAIN: [&str; 10] = [
    "--set",
    "data.source=blobs",
    "--set",
    "model.arch=mlp-small",
    "--set",
    "train.epochs=1",
    "--set",
    "data.n_train=64",
    "--set",
    "data.n_test=32",
];

#[test]
fn trace_bench_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = scoregrad(&["trace-bench", "--trials", "200", "--sigma", "0.1,1", "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = std::fs::read_to_string(a.join("variance.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(b.join("variance.csv")).unwrap());
    assert!(csv.starts_with("sigma,var_tte,var_hutchinson,bound,n_trials\n"));
    // default point (3, 4): bound = 4·25/σ²
    let row: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[3] - 10_000.0).abs() < 1e-6);
    assert!(a.join("config.kv").exists() && a.join("run.log").exists());
    assert!(!a.join(".lock").exists());
}

#[test]
fn refuses_non_empty_output_without_force() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let o = scoregrad(&["trace-bench", "--trials", "50", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("category: usage"));
    let o = scoregrad(&["trace-bench", "--trials", "50", "--out", p(dir.path()), "--force"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn live_lock_blocks_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".lock"), "1").unwrap();
    let o = scoregrad(&["trace-bench", "--trials", "50", "--out", p(dir.path()), "--force"]);
    assert_eq!(code(&o), 5);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    for args in [
        vec!["train", "--set", "train.epoch=3", "--out", p(&out)],
        vec!["train", "--reg", "ridge", "--out", p(&out)],
        vec!["fool", "--model", "/nonexistent/model.ckpt", "--out", p(&out)],
        vec!["verify", "--criteria", "11"],
    ] {
        let o = scoregrad(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("junk.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint at all").unwrap();
    let o = scoregrad(&["saliency", "--model", p(&ckpt), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn divergence_exits_4_and_keeps_last_finite_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut args = vec![
        "train",
        "--set",
        "train.schedule=0:1e305",
        "--set",
        "train.batch_size=8",
        "--out",
        p(&out),
    ];
    args.extend(TINY_TRAIN);
    let o = scoregrad(&args);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("last_finite.ckpt").exists());
}

#[test]
fn train_then_evaluate_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--reg", "score_matching", "--out", p(&run)];
    args.extend(TINY_TRAIN);
    let o = scoregrad(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(run.join("train.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let ckpt = run.join("final.ckpt");
    assert!(ckpt.exists());

    let prof = dir.path().join("prof");
    let mut args = vec!["density-profile", "--model", p(&ckpt), "--out", p(&prof)];
    args.extend(&TINY_TRAIN[..4]);
    let o = scoregrad(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let profile = std::fs::read_to_string(prof.join("density.csv")).unwrap();
    assert!(profile.starts_with("sigma,"));
    assert!(profile.lines().nth(1).unwrap().starts_with("0,0,"));
}

#[test]
fn verify_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = scoregrad(&["verify", "--criteria", "3,4", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    assert!(out.join("verify.csv").exists());
}
