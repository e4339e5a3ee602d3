use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pushsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pushsim"))
        .current_dir(dir)
        .env_remove("PUSHSIM_KEYSTORE")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn run_writes_default_artifacts_and_rechecks() {
    let dir = tempfile::tempdir().unwrap();
    let out = pushsim(dir.path(), &["run", "--scenario", "2", "--messages", "3", "--dump-noc", "noc.jsonl"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("e2e_confidentiality: PASS"));
    for f in ["pushsim-transcript.jsonl", "pushsim-report.json", "noc.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }

    let out =
        pushsim(dir.path(), &["check", "--transcript", "pushsim-transcript.jsonl", "--report", "pushsim-report.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).matches(": PASS").count(), 4);
}

#[test]
fn check_without_dump_skips_marker_scan() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pushsim(dir.path(), &["run"]).status.code(), Some(0));
    let out =
        pushsim(dir.path(), &["check", "--transcript", "pushsim-transcript.jsonl", "--report", "pushsim-report.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("e2e_confidentiality: SKIPPED"));
}

#[test]
fn edited_report_is_a_verdict_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pushsim(dir.path(), &["run", "--output", "t.jsonl", "--report", "r.json"]).status.code(), Some(0));
    let mut r = report(dir.path(), "r.json");
    r["checks"]["lockout_after_tamper"]["passed"] = false.into();
    fs::write(dir.path().join("r.json"), r.to_string()).unwrap();
    let out = pushsim(dir.path(), &["check", "--transcript", "t.jsonl", "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lockout_after_tamper"));
}

#[test]
fn leaked_marker_with_matching_report_fails_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let run = ["run", "--output", "t.jsonl", "--report", "r.json", "--dump-noc", "noc.jsonl"];
    assert_eq!(pushsim(dir.path(), &run).status.code(), Some(0));
    let mut r = report(dir.path(), "r.json");
    let marker = r["markers"][0].as_str().unwrap().to_owned();

    let dump = fs::read_to_string(dir.path().join("noc.jsonl")).unwrap();
    let mut lines: Vec<serde_json::Value> = dump.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // payloads are hex in the dump, so appending hex text appends the raw marker
    let leaked = format!("{}{marker}", lines[0]["payload"].as_str().unwrap());
    lines[0]["payload"] = leaked.into();
    let text: String = lines.iter().map(|l| l.to_string() + "\n").collect();
    fs::write(dir.path().join("noc.jsonl"), text).unwrap();

    r["checks"]["e2e_confidentiality"]["passed"] = false.into();
    fs::write(dir.path().join("r.json"), r.to_string()).unwrap();

    let out = pushsim(dir.path(), &["check", "--transcript", "t.jsonl", "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(1), "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("e2e_confidentiality: FAIL"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"scenario": 2, "messages": 4, "seed": 9}"#).unwrap();
    let out = pushsim(dir.path(), &["run", "--config", "c.json", "--messages", "2", "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(dir.path(), "r.json");
    assert_eq!(r["config"]["scenario"], 2);
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["messages"].as_array().unwrap().len(), 2);
}

#[test]
fn keystore_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pushsim"))
        .current_dir(dir.path())
        .env("PUSHSIM_KEYSTORE", dir.path().join("ks"))
        .args(["run", "--scenario", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let files = fs::read_dir(dir.path().join("ks")).unwrap().count();
    assert_eq!(files, 2);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = pushsim(dir.path(), &["run", "--messages", "1", "--tamper-after", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tamper_after"));

    fs::write(dir.path().join("c.json"), r#"{"scenaro": 2}"#).unwrap();
    assert_eq!(pushsim(dir.path(), &["run", "--config", "c.json"]).status.code(), Some(2));
    assert_eq!(pushsim(dir.path(), &["run", "--config", "absent.json"]).status.code(), Some(2));
    let out = pushsim(dir.path(), &["check", "--transcript", "absent.jsonl", "--report", "absent.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_prints_both_columns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.json"), r#"{"scenario": 1, "messages": 3}"#).unwrap();
    fs::write(dir.path().join("b.json"), r#"{"scenario": 2, "messages": 3}"#).unwrap();
    let out = pushsim(dir.path(), &["compare", "a.json", "b.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("latency.per_push_mean"));

    let out = pushsim(dir.path(), &["compare", "a.json", "b.json", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    let mean = rows.iter().find(|r| r["metric"] == "latency.per_push_mean").unwrap();
    assert!(mean["b"].as_f64().unwrap() < mean["a"].as_f64().unwrap());
}
