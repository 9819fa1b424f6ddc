//! End-to-end checks of the command-line interface: exit codes, report
//! determinism, and the documented subcommand surface.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_galefisher"))
}

fn workdir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("galefisher-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const EG1_JSON: &str = r#"{
  "goods": ["g1", "g2"],
  "agents": [
    {"id": "a1", "budget": 1.0,
     "utility": {"type": "bounded_linear", "values": [1.3, 0.45], "caps": [1.04, null]}},
    {"id": "a2", "budget": 1.0,
     "utility": {"type": "bounded_linear", "values": [0.01, 2.0], "caps": [0.003, 1.6]}}
  ]
}"#;

fn write(dir: &PathBuf, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn check_ce_passes_on_first_equilibrium() {
    let dir = workdir();
    let inst = write(&dir, "eg1.json", EG1_JSON);
    let alloc = write(&dir, "eg1_x1.json", "[[0.8, 0.2], [0.2, 0.8]]");
    let out = run(&[
        "check-ce",
        "--instance",
        &inst,
        "--prices",
        "1,1",
        "--allocation",
        &alloc,
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("pass"), "{text}");
}

#[test]
fn check_ce_fails_on_undersold_good() {
    let dir = workdir();
    let inst = write(&dir, "eg1b.json", EG1_JSON);
    let alloc = write(&dir, "bad.json", "[[0.5, 0.2], [0.2, 0.8]]");
    let out = run(&[
        "check-ce",
        "--instance",
        &inst,
        "--prices",
        "1,1",
        "--allocation",
        &alloc,
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_instance_is_usage_error() {
    let out = run(&["eval", "--instance", "missing.json", "--bundle", "1,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_rejected() {
    let out = run(&["eval", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_example_matching_prints_demands() {
    let out = run(&["run-example", "matching_nonsub"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("0.520202020202"), "{text}");
    assert!(text.contains("0.555555555556"), "{text}");
}

#[test]
fn unknown_example_is_usage_error() {
    let out = run(&["run-example", "nonexistent"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn max_nsw_json_is_deterministic() {
    let dir = workdir();
    let inst = write(&dir, "eg1c.json", EG1_JSON);
    let run_once = || {
        let out = run(&[
            "max-nsw",
            "--instance",
            &inst,
            "--format",
            "json",
            "--seed",
            "7",
        ]);
        assert_eq!(out.status.code(), Some(0));
        out.stdout
    };
    assert_eq!(run_once(), run_once(), "reports must be byte-identical");
}

#[test]
fn gale_demand_respects_budget_override() {
    let dir = workdir();
    let inst = write(&dir, "eg1d.json", EG1_JSON);
    let out = run(&[
        "gale-demand",
        "--instance",
        &inst,
        "--agent",
        "a1",
        "--budget",
        "0.5",
        "--prices",
        "1.0,1.0",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let spend = v["spend"].as_f64().unwrap();
    assert!(spend <= 0.5 + 1e-7, "spend {spend}");
}

#[test]
fn csv_trajectory_has_header() {
    let dir = workdir();
    let inst = write(&dir, "eg1e.json", EG1_JSON);
    let out = run(&["max-nsw", "--instance", &inst, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("iter,phi,gap,g1,g2"), "{text}");
}

#[test]
fn wgs_violation_sets_exit_one() {
    let dir = workdir();
    let inst = write(
        &dir,
        "wgs.json",
        r#"{
          "goods": ["g1", "g2"],
          "agents": [
            {"id": "a", "budget": 1.0,
             "utility": {"type": "bounded_linear", "values": [1.0, 1.0], "caps": [0.4, null]}}
          ]
        }"#,
    );
    let out = run(&[
        "check-wgs",
        "--instance",
        &inst,
        "--prices",
        "0.8,1",
        "--prices2",
        "0.9,1",
    ]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("VIOLATION"), "{text}");
}
