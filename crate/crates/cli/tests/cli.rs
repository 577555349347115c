use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn speedscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speedscale")).args(args).output().expect("spawn speedscale")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "name": "small",
  "power": {"kind": "polynomial", "alpha": 3.0},
  "policies": [{"policy": "laps_theorem1"}, {"policy": "srpt_power_jobs"}, {"policy": "rr_fixed", "speed": 1.0}],
  "workload": {"kind": "random", "seed": 5, "count": 6, "max_jobs": 3},
  "analysis": {"verify": true, "oracle": true}
}"#;

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out");
    let res = speedscale(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["instances"].as_array().unwrap().len(), 6);
    assert!(out.join("instances/r0000.json").exists());
    assert!(out.join("traces/r0000__oracle.csv").exists());
    assert!(out.join("costs/r0000__rr_at_1.json").exists());
    assert!(out.join("verifier/r0000__laps-theorem1_a-3.json").exists());
    let csv = fs::read_to_string(out.join("traces/r0000__srpt_plus_power-n_plus_1.csv")).unwrap();
    assert!(csv.starts_with("t_start,t_end,n_active,speed,energy_rate"));
}

#[test]
fn reruns_are_byte_identical_and_seed_override_changes_workload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(speedscale(&["run", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(speedscale(&["run", &cfg, "--out", b.to_str().unwrap()]).status.success());
    assert!(speedscale(&["run", &cfg, "--out", c.to_str().unwrap(), "--seed", "6"]).status.success());
    let read = |d: &Path| fs::read(d.join("summary.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn compare_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.json", SMALL);
    let out = dir.path().join("cmp");
    let res = speedscale(&["compare", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("policy"));
    assert!(stdout.contains("laps-theorem1(a=3)"));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("compare.json").exists());
}

#[test]
fn empty_workload_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "empty.json",
        r#"{"name": "empty", "power": {"kind": "polynomial", "alpha": 2.0},
            "policies": [{"policy": "rr_power_jobs"}],
            "workload": {"kind": "random", "seed": 1, "count": 0}}"#,
    );
    let res = speedscale(&["compare", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("warning"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = speedscale(&["run", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"name": "bad", "power": {"kind": "polynomial", "alpha": 3.0},
            "policies": [{"policy": "laps", "delta": 1.0}],
            "workload": {"kind": "batch", "n": 2, "size": 1.0, "release": 0.0}}"#,
    );
    let res = speedscale(&["run", &bad]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("bad.json") && err.contains("policies"), "{err}");
}

#[test]
fn lemma3_scenario_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "l3.json",
        r#"{"name": "l3", "power": {"kind": "polynomial", "alpha": 3.0},
            "policies": [{"policy": "rr_fixed", "speed": 0.5}, {"policy": "rr_fixed", "speed": 1.0}],
            "workload": {"kind": "lemma3", "k": 2.0, "v": 1.0}}"#,
    );
    let out = dir.path().join("out");
    assert!(speedscale(&["run", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let big: serde_json::Value = serde_json::from_slice(&fs::read(out.join("lemma3/rr_at_0.5.json")).unwrap()).unwrap();
    assert_eq!(big["branch"], "big_cost");
    let lag: serde_json::Value = serde_json::from_slice(&fs::read(out.join("lemma3/rr_at_1.json")).unwrap()).unwrap();
    assert_eq!(lag["branch"], "lagging");
    assert!(lag["opt_cost"].as_f64().unwrap() <= 68.0);
    assert!(out.join("traces/lemma3__rr_at_1__opt.csv").exists());
}
