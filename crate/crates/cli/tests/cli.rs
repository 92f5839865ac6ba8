//! End-to-end runs of the compiled binary on temporary files.

use std::path::Path;
use std::process::Command;

fn fstripe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fstripe"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn pianoroll_json(time: usize, notes: &[(usize, usize, usize)]) -> String {
    let tracks = 2;
    let mut data = vec![0u8; tracks * 128 * time];
    for &(track, pitch, step) in notes {
        data[(track * 128 + pitch) * time + step] = 1;
    }
    format!(
        r#"{{"tracks":{tracks},"pitches":128,"time":{time},"data":{}}}"#,
        serde_json::to_string(&data).unwrap()
    )
}

#[test]
fn eval_identical_files_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let roll = pianoroll_json(32, &[(0, 60, 0), (0, 64, 8), (1, 40, 4)]);
    let target = dir.path().join("target.json");
    let pred = dir.path().join("pred.json");
    write(&target, &roll);
    write(&pred, &roll);
    let out = fstripe()
        .args(["eval", "--target"])
        .arg(&target)
        .arg("--prediction")
        .arg(&pred)
        .args(["--piece-id", "self"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "piece_id,cs,ssmd,gs,ndd");
    assert_eq!(lines.next().unwrap(), "self,100,0,100,0");
}

#[test]
fn features_with_zero_frequencies_dump_constant_columns() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    write(
        &params,
        r#"{"frequencies":{"rows":2,"cols":1,"data":[0,0]},
            "phases_q":[0,0],"phases_k":[0,0],"gains":[1,1],
            "realizations":4,"seed":3}"#,
    );
    let out_path = dir.path().join("features.json");
    let status = fstripe()
        .args(["features", "--length", "5", "--pe", "rff", "--side", "q", "--params"])
        .arg(&params)
        .arg("--out")
        .arg(&out_path)
        .status()
        .unwrap();
    assert!(status.success());
    let matrix: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(matrix["rows"], 5);
    assert_eq!(matrix["cols"], 4);
    let data = matrix["data"].as_array().unwrap();
    // every row equals the first row: cos 0 and sin 0 columns scaled alike
    for row in 1..5 {
        for col in 0..4 {
            assert_eq!(data[row * 4 + col], data[col]);
        }
    }
}

#[test]
fn attend_is_idempotent_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("attend.json");
    write(
        &input,
        r#"{"q":{"rows":3,"cols":2,"data":[0.5,-0.2,0.1,0.9,-0.3,0.4]},
            "k":{"rows":3,"cols":2,"data":[0.2,0.8,-0.5,0.3,0.6,-0.1]},
            "v":{"rows":3,"cols":2,"data":[1,0,0,1,1,1]}}"#,
    );
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    for out in [&out_a, &out_b] {
        let status = fstripe()
            .args(["attend", "--pe", "rff", "--seed", "7", "--causal", "--input"])
            .arg(&input)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(&out_a).unwrap(), std::fs::read(&out_b).unwrap());
}

#[test]
fn attend_exact_emits_logits() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("attend.json");
    write(
        &input,
        r#"{"q":{"rows":2,"cols":2,"data":[0.5,-0.2,0.1,0.9]},
            "k":{"rows":2,"cols":2,"data":[0.2,0.8,-0.5,0.3]},
            "v":{"rows":2,"cols":1,"data":[1,2]}}"#,
    );
    let out = dir.path().join("exact.json");
    let status = fstripe()
        .args(["attend", "--pe", "rff", "--exact", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(value["logits"]["rows"], 2);
    assert_eq!(value["output"]["rows"], 2);
}

#[test]
fn bench_rejects_single_length() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let status = fstripe()
        .args(["bench", "--lengths", "64", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(!status.success());
}

#[test]
fn bench_writes_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let status = fstripe()
        .args(["bench", "--lengths", "16,32", "--methods", "fstripe", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,t,wall_ns,peak_extra_bytes,status");
    assert_eq!(lines.clone().count(), 2);
    assert!(lines.all(|l| l.starts_with("fstripe,") && l.ends_with(",ok")));
}

#[test]
fn approx_error_single_seed_has_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("approx.csv");
    let status = fstripe()
        .args([
            "approx-error",
            "--r-list",
            "8,32",
            "--seeds",
            "1",
            "--length",
            "12",
            "--n-f",
            "4",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        assert!(row.ends_with(",0"), "std column should be exactly 0: {row}");
    }
}

#[test]
fn train_with_zero_lr_keeps_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let init = dir.path().join("init.fspe");
    let trained = dir.path().join("trained.fspe");
    let log = dir.path().join("log.csv");
    let status = fstripe()
        .args([
            "train",
            "--task",
            "copy",
            "--samples",
            "2",
            "--length",
            "8",
            "--epochs",
            "1",
            "--lr",
            "0",
            "--model-dim",
            "8",
            "--heads",
            "2",
            "--layers",
            "1",
            "--ff-dim",
            "8",
            "--pe",
            "rff",
        ])
        .arg("--out-checkpoint")
        .arg(&trained)
        .arg("--out-log")
        .arg(&log)
        .arg("--init-checkpoint")
        .arg(&init)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(&init).unwrap(), std::fs::read(&trained).unwrap());
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("epoch,lr,loss,grad_norm\n"));
    assert_eq!(log_text.lines().count(), 2);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    write(&conf, "length = 3\nn_f = 2\n");
    let out = dir.path().join("f.json");
    let status = fstripe()
        .args(["features", "--pe", "rff", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let matrix: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(matrix["rows"], 3);
    assert_eq!(matrix["cols"], 4);
}

#[test]
fn missing_input_file_exits_nonzero() {
    let out = fstripe()
        .args([
            "eval",
            "--target",
            "/nonexistent/t.json",
            "--prediction",
            "/nonexistent/p.json",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
