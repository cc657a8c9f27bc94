use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hemopipe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hemopipe"))
        .current_dir(dir)
        .args(args)
        .env_remove("HEMOPIPE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = hemopipe(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const SHORT_PLAN: &str = r#"{"segments":[
    {"label":0,"duration_s":60},{"label":1,"duration_s":60},
    {"label":0,"duration_s":60},{"label":2,"duration_s":60}]}"#;

#[test]
fn stage_by_stage_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "plan.json", SHORT_PLAN);
    write(dir, "sim.json", &format!(r#"{{"plan":{SHORT_PLAN},"noise_sigma":50,"seed":3}}"#));

    let sim =
        ok(dir, &["simulate", "--config", "sim.json", "--out", "raw.bin", "--csv", "frames.csv", "--drift", "linear"]);
    assert_eq!(sim["frames"], 240 * 8);
    assert_eq!(sim["bytes"], 240 * 8 * 16);

    let processed = ok(dir, &["process", "--in", "raw.bin", "--plan", "plan.json", "--out", "hemo.csv"]);
    assert_eq!(processed["samples"], 240 * 7);
    assert_eq!(processed["transport"]["missing"], 0);
    assert!(processed["drift"]["corrected"].is_object(), "{processed}");

    // unquantized frames CSV as input; no transport section
    let from_csv = ok(dir, &["process", "--in", "frames.csv", "--plan", "plan.json", "--out", "hemo_csv.csv"]);
    assert_eq!(from_csv["samples"], 240 * 7);
    assert!(from_csv["transport"].is_null());

    let windows = ok(dir, &["windows", "--in", "hemo.csv", "--plan", "plan.json", "--out", "features.csv"]);
    assert_eq!(windows["windows"], (240 * 7 - 70) / 35 + 1);

    write(dir, "params.json", r#"{"n_trees":20}"#);
    let trained =
        ok(dir, &["train", "--in", "features.csv", "--params", "params.json", "--seed", "5", "--model", "model.json"]);
    assert_eq!(trained["trees"], 20);

    ok(dir, &["evaluate", "--in", "features.csv", "--model", "model.json", "--report", "eval.json"]);
    let report: Value = serde_json::from_slice(&fs::read(dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["cv"]["mode"], "stratified_shuffled");
    assert_eq!(report["cv"]["fold_accuracies"].as_array().unwrap().len(), 5);

    // the last time block holds only high-load windows, so that fold cannot train
    let out = hemopipe(
        dir,
        &["evaluate", "--in", "features.csv", "--model", "model.json", "--cv", "blocked", "--report", "b.json"],
    );
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "fold");
}

#[test]
fn seed_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "sim.json", &format!(r#"{{"plan":{SHORT_PLAN}}}"#));
    let out = Command::new(env!("CARGO_BIN_EXE_hemopipe"))
        .current_dir(dir)
        .args(["simulate", "--config", "sim.json", "--out", "raw.bin"])
        .env("HEMOPIPE_SEED", "77")
        .output()
        .unwrap();
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["seed"], 77);
    let explicit = ok(dir, &["simulate", "--config", "sim.json", "--out", "raw.bin", "--seed", "9"]);
    assert_eq!(explicit["seed"], 9);
}

#[test]
fn single_class_training_fails_with_a_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let rest = r#"{"segments":[{"label":0,"duration_s":60}]}"#;
    write(dir, "plan.json", rest);
    write(dir, "sim.json", &format!(r#"{{"plan":{rest}}}"#));
    ok(dir, &["simulate", "--config", "sim.json", "--out", "raw.bin"]);
    ok(dir, &["process", "--in", "raw.bin", "--out", "hemo.csv"]);
    ok(dir, &["windows", "--in", "hemo.csv", "--plan", "plan.json", "--out", "features.csv"]);

    let out = hemopipe(dir, &["train", "--in", "features.csv", "--model", "model.json"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "degenerate-training");
    assert!(!dir.join("model.json").exists());
}

#[test]
fn truncated_capture_still_processes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "sim.json", &format!(r#"{{"plan":{SHORT_PLAN}}}"#));
    ok(dir, &["simulate", "--config", "sim.json", "--out", "raw.bin"]);
    let mut bytes = fs::read(dir.join("raw.bin")).unwrap();
    let full = bytes.len();
    bytes.truncate(full - 7);
    // one corrupted packet in the middle
    bytes[160 * 16 + 11] ^= 0x40;
    fs::write(dir.join("raw.bin"), &bytes).unwrap();

    let summary = ok(dir, &["process", "--in", "raw.bin", "--out", "hemo.csv"]);
    let transport = &summary["transport"];
    assert_eq!(transport["frames"], full / 16 - 2);
    assert_eq!(transport["missing"], 1);
    assert_eq!(transport["gaps"][0]["after"], 159);
    let spans = transport["malformed"].as_array().unwrap();
    assert_eq!(spans.last().unwrap()["len"], 9);
}

#[test]
fn bad_input_reports_json_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write(dir, "eps.txt", "eps_hbo2_l1 = 1\neps_hb_l1 = 2\neps_hbo2_l2 = 2\neps_hb_l2 = 4\n");
    fs::write(dir.join("raw.bin"), []).unwrap();
    let out = hemopipe(dir, &["process", "--in", "raw.bin", "--eps", "eps.txt", "--out", "hemo.csv"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "singular");

    let out = hemopipe(dir, &["process", "--in", "missing.bin", "--out", "hemo.csv"]);
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "io");
}
