use std::path::Path;
use std::process::{Command, Output};

fn kvpack(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvpack")).args(args).current_dir(dir).output().expect("runs kvpack")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const SMALL: &str = r#"{ "preset": "llama2-70b-a100", "rates": [2], "seeds": [1], "workload": { "duration": 5 } }"#;

#[test]
fn missing_config_flag_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = kvpack(&["simulate"], d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn missing_and_malformed_files_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(kvpack(&["sweep", "--config", "nope.json"], d.path()).status.code(), Some(2));
    write(d.path(), "bad.json", "{ \"preset\": ");
    assert_eq!(kvpack(&["sweep", "--config", "bad.json"], d.path()).status.code(), Some(2));
    write(d.path(), "unknown.json", r#"{ "preset": "llama2-70b-a100", "colour": "red" }"#);
    assert_eq!(kvpack(&["sweep", "--config", "unknown.json"], d.path()).status.code(), Some(2));
    let out = kvpack(&["fit", "--kv", "a.csv", "--prefill", "b.csv", "--decode", "c.csv"], d.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_target_exits_3() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "spec.json",
        r#"{ "preset": "llama2-70b-a100", "rates": [20], "workload": { "duration": 10 }, "search": { "max_workers": 1 } }"#,
    );
    let out = kvpack(&["compare", "--config", "spec.json"], d.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_csv_to_stdout_or_out_dir() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "spec.json", SMALL);
    let out = kvpack(&["sweep", "--config", "spec.json"], d.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("policy,rate,seed,"));
    assert_eq!(text.lines().count(), 2);

    let out = kvpack(&["sweep", "--config", "spec.json", "--out", "res"], d.path());
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(d.path().join("res/sweep.csv")).unwrap(), text);
}

#[test]
fn simulate_writes_per_point_logs() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "spec.json", SMALL);
    let out = kvpack(&["simulate", "--config", "spec.json", "--out", "res", "--seed", "4"], d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let point = d.path().join("res/best-fit_r2_s4");
    for f in ["requests.csv", "events.jsonl", "decisions.jsonl", "metrics.json"] {
        assert!(point.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("res/summary.json")).unwrap()).unwrap();
    assert_eq!(summary[0]["seed"], 4);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "spec.json",
        r#"{ "preset": "llama2-70b-a100", "policies": ["best-fit", "p2", "jsq"], "rates": [3, 6], "seeds": [1, 2],
             "workload": { "duration": 10 }, "prediction": { "kind": "noisy", "spread": 0.3 }, "rebalance": true }"#,
    );
    let a = kvpack(&["sweep", "--config", "spec.json", "--jobs", "3"], d.path());
    let b = kvpack(&["sweep", "--config", "spec.json", "--jobs", "1"], d.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn plan_reports_groups() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "spec.json",
        r#"{ "preset": "llama2-70b-a100",
             "plan": { "rates": [10, 100], "demand": { "k5": 0.4, "c5": 0.5, "r_floor": 0 }, "sched_rate_limit": 40 } }"#,
    );
    let out = kvpack(&["plan", "--config", "spec.json"], d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["gpus_per_worker"], 2);
    assert_eq!(plan["rows"][1]["n_groups"], 3);
}
