use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dymixop::io::{self, Checkpoint};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dymixop"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "dymixop {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn burgers(dir: &Path, name: &str, grid: usize) -> PathBuf {
    let g = grid.to_string();
    run(dir, &["gen", "--pde", "burgers1d", "--out", name, "--trajectories", "6", "--grid", &g, "--seed", "3"]);
    dir.join(name)
}

const SMALL: &[&str] = &["--width", "6", "--modes", "4", "--batch", "4", "--precision", "f64"];

fn train(dir: &Path, data: &str, ckpt: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", data, "--checkpoint", ckpt];
    args.extend(SMALL);
    args.extend(extra);
    run(dir, &args)
}

#[test]
fn eval_reproduces_final_train_metric() {
    let dir = tempfile::tempdir().unwrap();
    burgers(dir.path(), "b.dmxd", 32);
    let out = train(dir.path(), "b.dmxd", "m.dmxc", &["--epochs", "3"]);
    let history = lines(&out);
    assert_eq!(history.len(), 3);
    let last = history[2]["train_metric"].as_f64().unwrap();

    let eval = run(dir.path(), &["eval", "--data", "b.dmxd", "--checkpoint", "m.dmxc", "--json", "--split", "train"]);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&eval.stdout).unwrap();
    let mse = rows[0]["mse"].as_f64().unwrap();
    assert!(((mse - last) / last).abs() <= 1e-6, "{mse} vs {last}");

    let log = std::fs::read_to_string(dir.path().join("m.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn predict_zero_steps_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    burgers(dir.path(), "b.dmxd", 32);
    train(dir.path(), "b.dmxd", "m.dmxc", &["--epochs", "1"]);
    run(dir.path(), &["predict", "--data", "b.dmxd", "--checkpoint", "m.dmxc", "--steps", "0", "--out", "p.dmxd"]);
    let (shape, values) = io::load_prediction(&dir.path().join("p.dmxd")).unwrap();
    assert_eq!(shape, vec![0, 1, 32]);
    assert!(values.is_empty());

    run(dir.path(), &["predict", "--data", "b.dmxd", "--checkpoint", "m.dmxc", "--steps", "4", "--out", "p.dmxd"]);
    let (shape, values) = io::load_prediction(&dir.path().join("p.dmxd")).unwrap();
    assert_eq!(shape, vec![4, 1, 32]);
    assert!(values.iter().all(|v| v.is_finite()));
}

#[test]
fn ablate_without_training_lists_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    burgers(dir.path(), "b.dmxd", 32);
    let mut args = vec!["ablate", "--data", "b.dmxd", "--epochs", "0", "--json"];
    args.extend(SMALL);
    let out = run(dir.path(), &args);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r["test_metric"].as_f64().unwrap().is_finite()));

    let table = run(dir.path(), &["ablate", "--data", "b.dmxd", "--epochs", "0", "--width", "4", "--modes", "4"]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.contains("hierarchical-only"));
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    burgers(dir.path(), "b.dmxd", 32);
    let whole = lines(&train(dir.path(), "b.dmxd", "whole.dmxc", &["--epochs", "4"]));
    train(dir.path(), "b.dmxd", "part.dmxc", &["--epochs", "2"]);
    let rest = lines(&train(dir.path(), "b.dmxd", "part.dmxc", &["--epochs", "2", "--resume", "part.dmxc"]));
    assert_eq!(whole[2..], rest[..]);

    let a = Checkpoint::<f64>::load(&dir.path().join("whole.dmxc")).unwrap();
    let b = Checkpoint::<f64>::load(&dir.path().join("part.dmxc")).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    assert_eq!(a.epoch, 4);
    assert_eq!(b.epoch, 4);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    burgers(dir.path(), "b.dmxd", 32);
    let one = train(dir.path(), "b.dmxd", "one.dmxc", &["--epochs", "2", "--threads", "1"]);
    let three = train(dir.path(), "b.dmxd", "three.dmxc", &["--epochs", "2", "--threads", "3"]);
    assert_eq!(one.stdout, three.stdout);
    let a = Checkpoint::<f64>::load(&dir.path().join("one.dmxc")).unwrap();
    let b = Checkpoint::<f64>::load(&dir.path().join("three.dmxc")).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.optimizer, b.optimizer);
}

#[test]
fn eval_accepts_a_finer_grid() {
    let dir = tempfile::tempdir().unwrap();
    burgers(dir.path(), "coarse.dmxd", 32);
    burgers(dir.path(), "fine.dmxd", 64);
    train(dir.path(), "coarse.dmxd", "m.dmxc", &["--epochs", "1"]);
    let out = run(dir.path(), &["eval", "--data", "fine.dmxd", "--checkpoint", "m.dmxc", "--json"]);
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert!(rows.iter().all(|r| r["mse"].as_f64().unwrap().is_finite()));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    burgers(dir.path(), "b.dmxd", 32);
    std::fs::write(
        dir.path().join("run.cfg"),
        "# tiny run\ndata = b.dmxd\nepochs = 5\nwidth = 4\nmodes = 4\nprecision = f64\n",
    )
    .unwrap();
    let out = run(dir.path(), &["train", "--config", "run.cfg", "--epochs", "1", "--checkpoint", "c.dmxc"]);
    assert_eq!(lines(&out).len(), 1);
    let ckpt = Checkpoint::<f64>::load(&dir.path().join("c.dmxc")).unwrap();
    assert_eq!(ckpt.model.width, 4);
}

#[test]
fn failures_print_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], &str)] = &[
        (&["train", "--data", "b.dmxd", "--no-such-key", "1"], "config"),
        (&["eval", "--checkpoint", "missing.dmxc", "--data", "x"], "io"),
        (&["gen", "--pde", "navier-stokes", "--out", "x"], "invalid"),
        (&["frobnicate"], "usage"),
    ];
    for (args, kind) in cases {
        let out = bin().current_dir(dir.path()).args(*args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(v["error"], *kind, "{args:?}: {err}");
    }
}

#[test]
fn gradcheck_reports_every_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gradcheck", "--width", "4", "--modes", "4", "--grid", "16", "--json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let params = report["params"].as_array().unwrap();
    assert!(params.iter().all(|p| p["passed"] == true));
    assert!(params.iter().any(|p| p["id"] == "layers.1.dt"));

    let fail = bin().current_dir(dir.path()).args(["gradcheck", "--tolerance", "0"]).output().unwrap();
    assert!(!fail.status.success());
}

#[test]
fn map_datasets_train_with_relative_metric() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["gen", "--pde", "darcy2d", "--out", "d.dmxd", "--trajectories", "4", "--grid", "16,16"]);
    let out = run(
        dir.path(),
        &["train", "--data", "d.dmxd", "--epochs", "1", "--width", "4", "--modes", "4,4", "--checkpoint", "d.dmxc"],
    );
    let rec = &lines(&out)[0];
    assert!(rec["test_loss"].as_f64().unwrap().is_finite());
}
