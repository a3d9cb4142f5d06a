use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_frontcast"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A 16×16, 40-day synthetic sequence in `dir/data`.
fn synth_data(dir: &Path) -> PathBuf {
    fs::write(dir.join("synth.json"), r#"{"height": 16, "width": 16, "num_days": 40, "seed": 5}"#).unwrap();
    let o = run(&["synth", "--config", "synth.json", "--out", "data"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("data")
}

fn frame_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

const TINY: &[&str] = &["--tiny", "--epochs", "2", "--batch-size", "8", "--lr", "3e-3"];

#[test]
fn synth_writes_every_day_reproducibly() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let o = run(&["synth", "--config", "synth.json", "--out", "again"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = frame_files(&tmp.path().join("data"));
    assert_eq!(a.len(), 40);
    assert_eq!(a, frame_files(&tmp.path().join("again")));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("data/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 42);
}

#[test]
fn config_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["synth", "--config", "missing.json", "--out", "data"], tmp.path());
    assert_eq!(code(&o), 2);
    fs::write(tmp.path().join("bad.json"), r#"{"height": 16, "width": 16, "num_days": 3}"#).unwrap();
    let o = run(&["synth", "--config", "bad.json", "--out", "data"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("num_days"), "{}", stderr(&o));
    let o = run(&["train", "--data", "nowhere", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 2);
    let o = run(&["frobnicate"], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn incompatible_flags_exit_two() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let cases: [&[&str]; 3] = [
        &["--no-physics", "--loss-variant", "2"],
        &["--model", "lstm", "--loss-variant", "3"],
        &["--no-cnn", "--cnn-layers", "2"],
    ];
    for flags in cases {
        let mut args = vec!["train", "--data", "data", "--out", "run"];
        args.extend_from_slice(flags);
        let o = run(&args, tmp.path());
        assert_eq!(code(&o), 2, "{flags:?}");
        assert!(!tmp.path().join("run/checkpoint.ckpt").exists());
    }
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let mut args = vec!["train", "--data", "data", "--out", "run"];
    args.extend_from_slice(TINY);
    let o = run(&args, tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = fs::read_to_string(tmp.path().join("run/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let ckpt = fs::read(tmp.path().join("run/checkpoint.ckpt")).unwrap();

    let o = run(&["eval", "--checkpoint", "run/checkpoint.ckpt", "--data", "data", "--out", "ev"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("ev/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "dataset,step,accuracy,precision,recall,f1");
    let steps: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(steps, ["1", "3", "7"]);
    let boxes: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("ev/boxplot.json")).unwrap()).unwrap();
    assert_eq!(boxes.as_array().unwrap().len(), 3);
    assert!(boxes[0]["f1"]["median"].is_number());

    // evaluation leaves the checkpoint untouched and is reproducible
    assert_eq!(fs::read(tmp.path().join("run/checkpoint.ckpt")).unwrap(), ckpt);
    let o = run(&["eval", "--checkpoint", "run/checkpoint.ckpt", "--data", "data", "--out", "ev2"], tmp.path());
    assert_eq!(code(&o), 0);
    for f in ["metrics.json", "metrics.csv", "boxplot.json"] {
        assert_eq!(fs::read(tmp.path().join("ev").join(f)).unwrap(), fs::read(tmp.path().join("ev2").join(f)).unwrap());
    }
}

#[test]
fn training_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    for out in ["a", "b"] {
        let mut args = vec!["train", "--data", "data", "--out", out, "--seed", "3"];
        args.extend_from_slice(TINY);
        assert_eq!(code(&run(&args, tmp.path())), 0);
    }
    let read = |d: &str| fs::read(tmp.path().join(d).join("checkpoint.ckpt")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn oracle_scores_perfectly_and_bad_horizon_exits_two() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let o = run(&["train", "--data", "data", "--out", "oracle", "--model", "oracle"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["eval", "--checkpoint", "oracle/checkpoint.ckpt", "--data", "data", "--out", "ev"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for line in stdout(&o).lines().skip(1) {
        assert!(line.ends_with(",100.00,100.00,100.00,100.00"), "{line}");
    }
    let o = run(
        &["eval", "--checkpoint", "oracle/checkpoint.ckpt", "--data", "data", "--out", "ev", "--horizons", "1,99"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("max feasible horizon is 7"), "{}", stderr(&o));
}

#[test]
fn eval_rejects_grid_mismatch() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    fs::write(tmp.path().join("big.json"), r#"{"height": 20, "width": 20, "num_days": 20, "seed": 1}"#).unwrap();
    assert_eq!(code(&run(&["synth", "--config", "big.json", "--out", "big"], tmp.path())), 0);
    let mut args = vec!["train", "--data", "data", "--out", "run", "--epochs", "1"];
    args.extend_from_slice(&TINY[..1]);
    assert_eq!(code(&run(&args, tmp.path())), 0);
    let o = run(&["eval", "--checkpoint", "run/checkpoint.ckpt", "--data", "big", "--out", "ev", "--all"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("grid"), "{}", stderr(&o));
}

#[test]
fn sweep_emits_one_row_per_value() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    for (axis, values) in [("loss-variant", "1,2,3,4"), ("cnn-layers", "1,2,3,4")] {
        let out = format!("sweep-{axis}");
        let mut args = vec!["sweep", "--data", "data", "--out", &out, "--axis", axis, "--values", values];
        args.extend_from_slice(&["--tiny", "--epochs", "1", "--batch-size", "16"]);
        let o = run(&args, tmp.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let csv = fs::read_to_string(tmp.path().join(&out).join("sweep.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "axis,value,dataset,step,accuracy,precision,recall,f1");
        assert_eq!(rows.len(), 5, "{csv}");
        for (k, row) in rows[1..].iter().enumerate() {
            assert!(row.starts_with(&format!("{axis},{},data,1,", k + 1)), "{row}");
        }
    }
    let o = run(&["sweep", "--data", "data", "--out", "s", "--axis", "cnn-layers", "--values", ""], tmp.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn single_value_sweep_matches_train_plus_eval() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let mut args = vec!["sweep", "--data", "data", "--out", "sw", "--axis", "transformer-layers", "--values", "2"];
    args.extend_from_slice(TINY);
    assert_eq!(code(&run(&args, tmp.path())), 0);
    let mut args = vec!["train", "--data", "data", "--out", "run", "--transformer-layers", "2"];
    args.extend_from_slice(TINY);
    assert_eq!(code(&run(&args, tmp.path())), 0);
    let o = run(
        &["eval", "--checkpoint", "run/checkpoint.ckpt", "--data", "data", "--out", "ev", "--horizons", "1"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    let sweep_csv = fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let eval_csv = fs::read_to_string(tmp.path().join("ev/metrics.csv")).unwrap();
    let sweep_row = sweep_csv.lines().nth(1).unwrap();
    assert_eq!(sweep_row.strip_prefix("transformer-layers,2,").unwrap(), eval_csv.lines().nth(1).unwrap());
}

#[test]
fn physics_audit_reports_six_terms() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let o = run(&["physics-audit", "--data", "data"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["pairs"], 39);
    assert_eq!(v["valid_cells_per_pair"], 14 * 14);
    let terms = v["terms"].as_object().unwrap();
    assert_eq!(terms.len(), 6);
    for t in terms.values() {
        assert!(t["max_abs"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn rollout_writes_each_step() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let mut args = vec!["train", "--data", "data", "--out", "run", "--epochs", "1"];
    args.extend_from_slice(&TINY[..1]);
    assert_eq!(code(&run(&args, tmp.path())), 0);
    let o = run(
        &["rollout", "--checkpoint", "run/checkpoint.ckpt", "--data", "data", "--out", "ro", "--start", "5", "--steps", "4"],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(frame_files(&tmp.path().join("ro")).len(), 4);
    let steps: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("ro/rollout.json")).unwrap()).unwrap();
    assert_eq!(steps[0]["day_index"], 12);
    assert_eq!(steps[3]["day_index"], 15);
    assert!(steps[3]["f1"].is_number());
}

#[test]
fn thread_cap_must_be_positive() {
    let tmp = TempDir::new().unwrap();
    synth_data(tmp.path());
    let o = bin()
        .args(["physics-audit", "--data", "data"])
        .current_dir(tmp.path())
        .env("FRONTCAST_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    let o = bin()
        .args(["physics-audit", "--data", "data"])
        .current_dir(tmp.path())
        .env("FRONTCAST_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}
