use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_mddm");

fn mddm(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("run mddm")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).expect("utf8")
}

const SMALL: [&str; 8] = ["--runs", "2", "--dialogues", "1000", "--checkpoint-interval", "500", "--eval-dialogues", "50"];

#[test]
fn gen_db_writes_149_entities() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mddm(&["gen-db", "--seed", "3", "--out", "db.json"], dir.path()));
    let text = std::fs::read_to_string(dir.path().join("db.json")).unwrap();
    let db = mddm::ontology::Database::from_json(&text, &mddm::ontology::Ontology::restaurant()).unwrap();
    assert_eq!(db.len(), 149);
    let again = ok(&mddm(&["gen-db", "--seed", "3"], dir.path()));
    assert_eq!(again.trim(), text.trim());
}

#[test]
fn train_writes_curve_policies_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--variant", "one-dim", "--out", "run"];
    args.extend(SMALL);
    let stdout = ok(&mddm(&args, dir.path()));
    assert!(stdout.contains("one-dim after 1000 dialogues"));
    let out = dir.path().join("run");
    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
    assert!(curve.starts_with(mddm::harness::CURVE_HEADER));
    assert!(out.join("policies/run-1/onedim.json").is_file());
    assert!(out.join("config.json").is_file());
    let log = std::fs::read_to_string(out.join("logs/episodes.jsonl")).unwrap();
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let eval = ok(&mddm(&["evaluate", "--policies", "run/policies/run-0", "--dialogues", "40"], dir.path()));
    let metrics: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(metrics["dialogues"], 40);
}

#[test]
fn transfer_uses_saved_agents() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--variant", "multi-dim", "--out", "src"];
    args.extend(SMALL);
    ok(&mddm(&args, dir.path()));

    let mut args = vec!["transfer", "--source-policies", "src/policies", "--out", "frozen"];
    args.extend(SMALL);
    ok(&mddm(&args, dir.path()));
    for file in ["autofeedback.json", "social.json"] {
        let a = std::fs::read(dir.path().join("src/policies/run-1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("frozen/policies/run-1").join(file)).unwrap();
        assert_eq!(a, b, "{file} changed");
    }

    let mut args = vec!["transfer", "--freeze", "false", "--source-policies", "src/policies/run-0", "--out", "adapt"];
    args.extend(SMALL);
    let stdout = ok(&mddm(&args, dir.path()));
    assert!(stdout.starts_with("multi-dim-transfer-adapt"));
}

#[test]
fn transfer_without_sources_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = mddm(&["train", "--variant", "multi-dim-transfer", "--runs", "1", "--dialogues", "10"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{"variant": "multi-dim", "training": {"runs": 1, "total_training_dialogues": 200,
        "checkpoint_interval": 100, "eval_dialogues_per_point": 20}}"#;
    std::fs::write(dir.path().join("c.json"), config).unwrap();
    ok(&mddm(&["train", "--config", "c.json", "--dialogues", "300", "--out", "o"], dir.path()));
    let curve = std::fs::read_to_string(dir.path().join("o/curve.csv")).unwrap();
    let last = curve.lines().last().unwrap();
    assert!(last.starts_with("300,"), "{last}");
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/config.json")).unwrap()).unwrap();
    assert_eq!(saved["variant"], "multi-dim");

    std::fs::write(dir.path().join("bad.json"), r#"{"training": {"runz": 1}}"#).unwrap();
    assert!(!mddm(&["train", "--config", "bad.json"], dir.path()).status.success());
}

#[test]
fn chat_answers_typed_acts() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--variant", "multi-dim", "--out", "o"];
    args.extend(SMALL);
    ok(&mddm(&args, dir.path()));
    let mut child = Command::new(BIN)
        .args(["chat", "--policies", "o/policies/run-0"])
        .current_dir(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"inform(foodtype=thai)\nnot an act\nrequest(phonenumber)\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let stdout = ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not an act"));
    assert_eq!(stdout.matches("system: ").count(), 2);
    assert_eq!(stdout.matches("state: ").count(), 2);
}

#[test]
fn enumerate_combinations_lists_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&mddm(&["enumerate-combinations"], dir.path()));
    let total: usize = stdout.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 30);
}
