use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios")
}

fn cpcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpcsim")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    scenarios().join(name).display().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_fig1_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpcsim(&["run", &scenario("fig1.json"), "--out", p(dir.path())]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("pi3 -> nack"), "{stdout}");
    for f in ["log.jsonl", "verdict.json", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verdict.json")).unwrap()).unwrap();
    assert_eq!(v["composable"], true);
}

#[test]
fn check_reproduces_the_run_verdict() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cpcsim(&["run", &scenario("weakport.json"), "--out", p(dir.path())]).status.code(), Some(2));
    let out = cpcsim(&["check", p(&dir.path().join("log.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"], "not_composable");
    assert_eq!(v["violation"]["kind"], "trace");
}

#[test]
fn same_seed_same_log() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        cpcsim(&["run", &scenario("reusetag_f1.json"), "--seed", "42", "--out", p(d.path())]);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("log.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn step_cap_exits_with_non_termination() {
    let out = cpcsim(&["run", &scenario("reusetag_f1.json"), "--steps", "5"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn check_caps_give_undecided() {
    let dir = tempfile::tempdir().unwrap();
    cpcsim(&["run", &scenario("fig1.json"), "--out", p(dir.path())]);
    let out = cpcsim(&["check", p(&dir.path().join("log.jsonl")), "--max-requests", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn sweep_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.json");
    let out = cpcsim(&["sweep", &scenario("reusetag_f1.json"), "--seeds", "0..10", "--out", p(&summary)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(s["runs"], 10);
    assert!(s["max_distinct_tags"].as_u64().unwrap() <= 3);
}

#[test]
fn lowerbound_budget_flag() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("lb.json");
    assert_eq!(cpcsim(&["gen-lowerbound", "--f", "1", "--out", p(&file)]).status.code(), Some(0));
    assert_eq!(cpcsim(&["run", p(&file)]).status.code(), Some(0));
    assert_eq!(cpcsim(&["run", p(&file), "--tag-budget", "2"]).status.code(), Some(3));
}

#[test]
fn script_flag_replaces_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"[{"op":"invoke","request":0},{"op":"run","until":{"kind":"responded","request":0}}]"#).unwrap();
    let out = cpcsim(&["run", &scenario("fig1.json"), "--script", p(&script)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"version\": 1,\n  \"name\": }").unwrap();
    let out = cpcsim(&["run", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(cpcsim(&["run", &scenario("fixtag_crashstorm.json"), "--tag-budget", "3"]).status.code(), Some(1));
    assert_eq!(cpcsim(&["gen-lowerbound", "--f", "0"]).status.code(), Some(1));
}
