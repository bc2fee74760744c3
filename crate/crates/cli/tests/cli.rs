use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semg::eval::{read_points_csv, ParetoPoint};
use semg::model::{build_model, load_checkpoint};
use semg::train::TrainConfig;

fn semg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// The last stderr line must be the `{"error", "message"}` object.
fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    let v: serde_json::Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"));
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

fn write_config(dir: &Path) -> PathBuf {
    let text = format!(
        r#"experiment_id = "synth"
output_dir = {runs:?}

[data]
dataset_dir = {data:?}

[data.window]
window_len = 2000
pad_past = 400
pad_future = 200

[data.synth]
num_train_users = 2
num_test_users = 1
sessions_per_user = 4
session_duration_s = 3.0

[model]
hidden_size = 16
num_layers = 1
num_heads = 4

[train]
epochs = 0
micro_batch = 4
accum_steps = 1
seed = 5
"#,
        runs = dir.join("runs"),
        data = dir.join("data"),
    );
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn synth_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let runs = tmp.path().join("runs");

    ok(semg(&["synth", "--config", cfg]));
    let manifest = tmp.path().join("data/manifest.json");
    assert!(manifest.exists());
    assert!(runs.join("synth/provenance.json").exists());
    assert!(runs.join("synth/reports/synth_summary.json").exists());

    // an existing dataset is never overwritten
    assert_eq!(error_kind(&semg(&["synth", "--config", cfg])), "invalid_config");
    // nor is an existing experiment directory
    assert_eq!(error_kind(&semg(&["train", "--config", cfg])), "invalid_config");

    // zero epochs return the seeded initialization unchanged
    std::fs::write(
        tmp.path().join("train.toml"),
        std::fs::read_to_string(cfg).unwrap().replace("\"synth\"", "\"t0\""),
    )
    .unwrap();
    let train_cfg = tmp.path().join("train.toml");
    ok(semg(&["train", "--config", train_cfg.to_str().unwrap()]));
    let ckpt_path = runs.join("t0/checkpoints/model.ckpt");
    let ckpt = load_checkpoint(&ckpt_path).unwrap();
    let tc = TrainConfig { seed: 5, ..Default::default() };
    let init = build_model(&ckpt.model.cfg, tc.init_seed()).unwrap();
    assert_eq!(ckpt.model.params, init.params);
    for f in ["provenance.json", "config.toml", "reports/model_record.json", "reports/model_curve.csv"] {
        assert!(runs.join("t0").join(f).exists(), "{f}");
    }

    // evaluation is byte-identical across runs
    let ckpt_s = ckpt_path.to_str().unwrap();
    let manifest_s = manifest.to_str().unwrap();
    let args = ["eval", "--checkpoint", ckpt_s, "--manifest", manifest_s, "--window-len", "2000", "--pad-past", "400"];
    let a = ok(semg(&args));
    let b = ok(semg(&args));
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(report["split"], "test");
    assert_eq!(report["checkpoint_id"], ckpt.id());

    // distillation and personalization need their source checkpoints
    assert_eq!(error_kind(&semg(&["distill", "--config", cfg, "--train.epochs", "0"])), "invalid_config");
    assert_eq!(error_kind(&semg(&["personalize", "--config", cfg])), "invalid_config");
}

#[test]
fn pareto_output_is_dominance_free() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("points.csv");
    std::fs::write(&input, "params,cer,tag\n100,9.0,a\n200,8.0,b\n300,8.5,c\n150,9.5,d\n400,4.0,e\n400,4.0,f\n").unwrap();
    let out = tmp.path().join("front.csv");
    let stdout = ok(semg(&["pareto", "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()]));
    let front = read_points_csv(stdout.as_bytes()).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), stdout);
    let dominates =
        |p: &ParetoPoint, q: &ParetoPoint| p.params <= q.params && p.cer <= q.cer && (p.params < q.params || p.cer < q.cer);
    for p in &front {
        assert!(front.iter().all(|q| !dominates(q, p)));
    }
    let tags: Vec<_> = front.iter().map(|p| p.tag.as_str()).collect();
    assert_eq!(tags, ["a", "b", "e", "f"]);
}

#[test]
fn failures_are_reported_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.ckpt");
    assert_eq!(error_kind(&semg(&["bench", "--checkpoint", missing.to_str().unwrap()])), "io");
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "params,cer\n1,2\n").unwrap();
    assert_eq!(error_kind(&semg(&["pareto", "--input", bad.to_str().unwrap()])), "malformed_header");
    assert_eq!(error_kind(&semg(&["frobnicate"])), "usage");
    assert_eq!(error_kind(&semg(&["train", "--config", "x.toml", "--train.epochs"])), "invalid_config");
}

#[test]
fn grid_count_only_lists_twenty_configurations() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&ok(semg(&["grid", "--config", cfg.to_str().unwrap(), "--count-only"]))).unwrap();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[0]["params"], 631_523);
    assert_eq!(rows[19]["params"], 134_604_387);
}

#[test]
fn bench_reports_timing_and_streaming() {
    let out = ok(semg(&[
        "bench", "--arch", "d128-l2", "--runs", "2", "--trials", "3", "--window-samples", "2000", "--emit-last-n", "4",
        "--stream-seconds", "2",
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["timing"]["runs"], 2);
    assert_eq!(v["timing"]["trials"], 3);
    assert_eq!(v["timing"]["trial_means_ms"].as_array().unwrap().len(), 3);
    assert_eq!(v["streaming"]["emit_last_n"], 4);
    // 4000 samples, one forward every 80
    assert_eq!(v["streaming"]["forward_passes"], 50);
}
