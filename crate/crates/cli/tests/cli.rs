use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pocketdiff")).current_dir(dir).args(args).env_remove("POCKETDIFF_THREADS").output().unwrap()
}

fn header(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

fn error_json(o: &Output) -> Value {
    let line = String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("").to_string();
    serde_json::from_str(&line).unwrap_or_else(|_| panic!("stderr is not JSON: {line}"))
}

#[test]
fn flag_overrides_config_which_overrides_default() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"seed": 5, "dataset": {"n_train": 4, "n_test": 2}}"#).unwrap();
    let o = run(tmp.path(), &["--config", "c.json", "gen", "--out", "d", "--n-train", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = &header(&tmp.path().join("d/manifest.jsonl"))["config"];
    assert_eq!(cfg["dataset"]["n_train"], 3);
    assert_eq!(cfg["dataset"]["n_test"], 2);
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["schedule"]["steps"], 100);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"sede": 1}"#).unwrap();
    let o = run(tmp.path(), &["--config", "c.json", "selftest"]);
    assert_eq!(o.status.code(), Some(2));
    let e = &error_json(&o)["error"];
    assert_eq!(e["code"], 2);
    assert!(e["message"].as_str().unwrap().contains("sede"));
}

#[test]
fn invalid_config_value_and_missing_input_codes() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.json"), r#"{"guidance": {"s": -1.0}}"#).unwrap();
    let o = run(tmp.path(), &["--config", "c.json", "gen", "--out", "d"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["code"], 2);

    let o = run(tmp.path(), &["train-diffusion", "--data", "nowhere", "--out", "x.ckpt"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_json(&o)["error"]["code"], 3);

    let o = run(tmp.path(), &["--threads", "0", "selftest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_reports_passing_identities() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["selftest"]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 60);
}
