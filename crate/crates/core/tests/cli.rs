use std::path::Path;
use std::process::{Command, Output};

fn nesylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nesylab"))
        .args(args)
        .env_remove(nesylab::cli::DATA_DIR_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn train_small(loss: &str, out: &Path) -> Output {
    nesylab(&[
        "train",
        "--loss",
        loss,
        "--synthetic",
        "--runs",
        "2",
        "--epochs",
        "1",
        "--train-pairs",
        "64",
        "--test-per-config",
        "5",
        "--eval-every",
        "1",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn wmc_prints_probability() {
    let o = nesylab(&["wmc", "--formula", "(!r&g)|(r&!g)|(!r&!g)", "--probs", "0.3,0.6"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "0.82");
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        vec!["wmc", "--formula", "r&", "--probs", "0.3"],
        vec!["wmc", "--formula", "r&g", "--probs", "0.3"],
        vec!["wmc", "--formula", "r", "--probs", "1.5"],
        vec!["check", "--suite", "nonsense"],
        vec!["train", "--loss", "disjunctive"],
        vec!["frobnicate"],
    ] {
        let o = nesylab(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn missing_data_dir_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = dir.path().join("out");
    let o = nesylab(&[
        "train",
        "--loss",
        "semantic",
        "--data-dir",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_theorem1_passes() {
    let o = nesylab(&["check", "--suite", "theorem1", "--trials", "50", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn train_writes_outputs_and_report_regenerates_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train_small("disjunctive", &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in [
        "trajectory.csv",
        "aggregate.csv",
        "ranked_aggregate.csv",
        "config.txt",
        "report.txt",
        "runs.csv",
        "checkpoints/run-000.json",
        "checkpoints/run-001.json",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }

    let regenerated = ["aggregate.csv", "ranked_aggregate.csv", "report.txt"];
    let before: Vec<Vec<u8>> = regenerated.iter().map(|n| std::fs::read(out.join(n)).unwrap()).collect();
    for n in regenerated {
        std::fs::remove_file(out.join(n)).unwrap();
    }
    let o = nesylab(&["report", "--dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for (n, bytes) in regenerated.iter().zip(&before) {
        assert_eq!(&std::fs::read(out.join(n)).unwrap(), bytes, "{n}");
    }
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(train_small("semantic", &a).status.code(), Some(0));
    assert_eq!(train_small("semantic", &b).status.code(), Some(0));
    for name in ["trajectory.csv", "aggregate.csv", "runs.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn trajectory_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(train_small("truncated", &out).status.code(), Some(0));

    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("run,step,partition,world,prob"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 2 runs, 2 updates each (64 pairs / batch 32), records at steps 0..=2, 16 cells.
    assert_eq!(rows.len(), 2 * 3 * 16);
    for chunk in rows.chunks(4) {
        let total: f64 = chunk.iter().map(|r| r[4].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(chunk.iter().all(|r| r[2] == chunk[0][2]));
    }
    let partitions: Vec<&str> = rows[..16].iter().step_by(4).map(|r| r[2]).collect();
    assert_eq!(partitions, ["nn", "ng", "rn", "rg"]);

    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().next(), Some("step,partition,world,mean,ci95"));
    assert_eq!(agg.lines().count(), 1 + 3 * 16);
}
