//! End-to-end runs of the `plantar` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn plantar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plantar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) {
    let out = plantar(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small experiment: 2 users × 2 motions × 3 s and a 4-step toy model.
fn write_config(dir: &Path, lr: &str) -> PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{
  "data": {{ "window": 4, "train_stride": 2 }},
  "augment": {{ "max_shift": 2, "copies": 1 }},
  "model": {{ "window": 4, "d_model": 8, "n_heads": 2, "ffn_dim": 16, "film_hidden": 6, "head_hidden": 5 }},
  "train": {{ "epochs": 2, "batch_size": 16, "lr": {lr}, "seed": 7 }},
  "synth": {{
    "n_users": 2,
    "duration_s": 3.0,
    "seed": 4,
    "motions": [
      {{ "name": "squat", "amplitude": [0.1,0.1,0.8,0.8,0.3,0.3,0.6,0.6], "frequency_hz": [0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5],
         "phase": [0,0,0,0,0,0,0,0], "duration_s": 3.0, "noise_sigma": 0.02 }},
      {{ "name": "twist", "amplitude": [0.2,0.2,0.2,0.2,0.7,0.7,0.1,0.1], "frequency_hz": [0.4,0.4,0.4,0.4,0.4,0.4,0.4,0.4],
         "phase": [0,3.14,0,3.14,0,3.14,0,3.14], "duration_s": 3.0, "noise_sigma": 0.02 }}
    ]
  }}
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn generated(dir: &TempDir) -> (PathBuf, PathBuf) {
    let config = write_config(dir.path(), "0.001");
    let data = dir.path().join("data");
    ok(&["gen", "--config", s(&config), "--out", s(&data)]);
    (config, data.join("manifest.json"))
}

#[test]
fn ground_truth_oracle_scores_zero_rmse() {
    let dir = TempDir::new().unwrap();
    let (config, manifest) = generated(&dir);
    let report = dir.path().join("report.json");
    let plots = dir.path().join("plots");
    ok(&[
        "eval", "--ckpt", "ground-truth", "--data", s(&manifest), "--split", "louo:u01", "--report", s(&report),
        "--plots", s(&plots), "--config", s(&config),
    ]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["rmse_mean"].as_f64(), Some(0.0));
    assert_eq!(fs::read_dir(&plots).unwrap().count(), 2);
}

#[test]
fn train_and_eval_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let (config, manifest) = generated(&dir);
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    for run in 0..2 {
        let ckpt = dir.path().join(format!("model{run}.ckpt"));
        let trace = dir.path().join(format!("trace{run}.csv"));
        let report = dir.path().join(format!("report{run}.json"));
        ok(&[
            "train", "--config", s(&config), "--data", s(&manifest), "--out", s(&ckpt), "--split", "louo:u01",
            "--trace", s(&trace),
        ]);
        ok(&[
            "eval", "--ckpt", s(&ckpt), "--data", s(&manifest), "--split", "louo:u01", "--report", s(&report),
            "--config", s(&config),
        ]);
        assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 3);
        reports.push(fs::read(&report).unwrap());
        checkpoints.push(fs::read(&ckpt).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(checkpoints[0], checkpoints[1]);
}

#[test]
fn streaming_replay_matches_batch_evaluation() {
    let dir = TempDir::new().unwrap();
    let (config, manifest) = generated(&dir);
    let ckpt = dir.path().join("model.ckpt");
    ok(&["train", "--config", s(&config), "--data", s(&manifest), "--out", s(&ckpt)]);
    let dump = dir.path().join("dump.csv");
    let report = dir.path().join("report.json");
    ok(&[
        "eval", "--ckpt", s(&ckpt), "--data", s(&manifest), "--split", "louo:u00", "--report", s(&report),
        "--predictions", s(&dump), "--config", s(&config),
    ]);
    let data = manifest.parent().unwrap();
    let preds = dir.path().join("stream.csv");
    ok(&[
        "infer", "--ckpt", s(&ckpt), "--pressure", s(&data.join("u00_squat_pressure.csv")), "--bio",
        s(&data.join("u00_bio.json")), "--out", s(&preds), "--config", s(&config),
    ]);
    let stream = fs::read_to_string(&preds).unwrap();
    let dump = fs::read_to_string(&dump).unwrap();
    // the dump lists u00's squat recording first; its frames from W−1 on
    // carry the same last-step estimates the stream emits
    let streamed: Vec<&str> = stream.lines().skip(1).collect();
    assert_eq!(streamed.len(), 60 - 4 + 1);
    for (row, line) in streamed.iter().enumerate() {
        let batch_line = dump.lines().nth(1 + 3 + row).unwrap();
        let batch: Vec<&str> = batch_line.split(',').collect();
        let expected = format!("{},{}", batch[0], batch[9..].join(","));
        assert_eq!(*line, expected);
    }
}

#[test]
fn symmetric_predictions_have_zero_imbalance() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("preds.csv");
    let mut text = String::from("t_ms,pred0,pred1,pred2,pred3,pred4,pred5,pred6,pred7\n");
    for t in 0..40 {
        let v = [0.1 + 0.01 * t as f64, 0.5, 0.3 * (t % 3) as f64, 0.9];
        text += &format!("{},{a},{a},{b},{b},{c},{c},{d},{d}\n", t * 50, a = v[0], b = v[1], c = v[2], d = v[3]);
    }
    fs::write(&input, text).unwrap();
    let report = dir.path().join("imbalance.json");
    ok(&["imbalance", "--input", s(&input), "--report", s(&report)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["imbalance_score"].as_f64(), Some(0.0));
    assert_eq!(json["n_frames"].as_u64(), Some(40));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&plantar(&[])), 1);
    assert_eq!(code(&plantar(&["train", "--config", "c.json"])), 1);
    assert_eq!(code(&plantar(&["frobnicate"])), 1);
    assert_eq!(code(&plantar(&["--help"])), 0);

    let dir = TempDir::new().unwrap();
    let (config, manifest) = generated(&dir);
    let out = plantar(&[
        "eval", "--ckpt", "ground-truth", "--data", s(&manifest), "--split", "sideways:u00", "--report",
        s(&dir.path().join("r.json")), "--config", s(&config),
    ]);
    assert_eq!(code(&out), 1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{ "model": { "window": 8 } }"#).unwrap();
    assert_eq!(code(&plantar(&["gen", "--config", s(&bad), "--out", s(&dir.path().join("x"))])), 1);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let (config, manifest) = generated(&dir);
    let missing = dir.path().join("nope.json");
    let out = plantar(&[
        "eval", "--ckpt", "ground-truth", "--data", s(&missing), "--report", s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&out), 2);

    // a pressure reading above the 20 kg sensor range
    let data = manifest.parent().unwrap();
    let pressure = data.join("u00_squat_pressure.csv");
    let text = fs::read_to_string(&pressure).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(str::to_string).collect();
    cells[3] = "25.0".into();
    lines[5] = cells.join(",");
    let broken = dir.path().join("broken.csv");
    fs::write(&broken, lines.join("\n") + "\n").unwrap();
    let ckpt = dir.path().join("model.ckpt");
    ok(&["train", "--config", s(&config), "--data", s(&manifest), "--out", s(&ckpt)]);
    let out = plantar(&[
        "infer", "--ckpt", s(&ckpt), "--pressure", s(&broken), "--bio", s(&data.join("u00_bio.json")), "--out",
        s(&dir.path().join("p.csv")),
    ]);
    assert_eq!(code(&out), 2);

    // a truncated checkpoint
    let bytes = fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let out = plantar(&[
        "eval", "--ckpt", s(&cut), "--data", s(&manifest), "--report", s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let (_, manifest) = generated(&dir);
    let config = write_config(dir.path(), "1e38");
    let out = plantar(&[
        "train", "--config", s(&config), "--data", s(&manifest), "--out", s(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
