use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use granscale::harness::{ResultSet, ScalingMode};
use granscale::report::STRONG_CSV_HEADER;

fn granscale(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_granscale"));
    cmd.args(args).env_remove("GRANSCALE_SEED").env("RUST_LOG", "warn");
    cmd
}

fn output(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn granscale")
}

fn write_plan(dir: &Path, json: &str) -> String {
    write_plan_as(dir, "plan.json", json)
}

fn write_plan_as(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_owned()
}

const SYNTHETIC_PLAN: &str = r#"{
  "workload": {"kind": "synthetic", "compute_ms_per_worker": 4.0, "exchange_ms_per_worker": 1.0, "iterations": 2},
  "mode": "strong",
  "worker_counts": [1, 2],
  "base_problem_size": 100,
  "repetitions": 3,
  "seed": 5
}"#;

#[test]
fn validate_fixture_prints_table_and_succeeds() {
    let out = output(&mut granscale(&["validate-fixture"]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("31.478"));
    assert!(text.contains("excluded: speedup 0.0047 repeats"));
    assert!(text.lines().last().unwrap().starts_with("PASS"));
}

#[test]
fn run_then_report_all_formats() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), SYNTHETIC_PLAN);
    let results = dir.path().join("r.jsonl");
    let results_arg = results.to_str().unwrap();
    let runs = dir.path().join("runs.jsonl");
    let status = granscale(&[
        "run", "--plan", &plan, "--out", results_arg, "--runs-log", runs.to_str().unwrap(),
    ])
    .status()
    .unwrap();
    assert!(status.success());
    let set = ResultSet::load(&results).unwrap();
    assert!(set.is_complete());
    assert_eq!(set.cells.len(), 3);
    // Every counted run is logged; warm-up runs are not.
    assert!(fs::read_to_string(&runs).unwrap().lines().count() >= 3 * 3);

    let csv_path = dir.path().join("r.csv");
    let out = output(&mut granscale(&[
        "report", "--in", results_arg, "--format", "csv", "--out", csv_path.to_str().unwrap(),
    ]));
    assert!(out.status.success());
    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(STRONG_CSV_HEADER));
    assert!(lines.next().unwrap().starts_with("1,100,"));
    assert!(lines.next().unwrap().starts_with("2,100,"));

    let out = output(&mut granscale(&["report", "--in", results_arg, "--format", "table"]));
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("granularity"));
    assert!(table.contains("scalable"));

    let out = output(&mut granscale(&["report", "--in", results_arg, "--format", "json"]));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    assert_eq!(json["complete"], true);
    assert!(json["verdict"]["scalable"].is_boolean());
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), SYNTHETIC_PLAN);
    let results = dir.path().join("r.jsonl");
    let status = granscale(&["run", "--plan", &plan, "--out", results.to_str().unwrap()])
        .env("GRANSCALE_SEED", "777")
        .status()
        .unwrap();
    assert!(status.success());
    let set = ResultSet::load(&results).unwrap();
    assert_eq!(set.header.plan.seed, 777);
    assert!(set.cells.iter().all(|c| c.seed == 777));
}

#[test]
fn failing_cell_gives_partial_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // Three points cannot be split across four workers.
    let plan = write_plan(
        dir.path(),
        r#"{"workload": {"kind": "kmeans", "n_clusters": 1, "dims": 2},
            "mode": "strong", "worker_counts": [1, 4], "base_problem_size": 3,
            "repetitions": 2, "seed": 1}"#,
    );
    let results = dir.path().join("r.jsonl");
    let out = output(&mut granscale(&["run", "--plan", &plan, "--out", results.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p=4"));
    let set = ResultSet::load(&results).unwrap();
    assert_eq!(set.cells.len(), 2);
    assert!(!set.is_complete());
}

#[test]
fn resume_rejects_a_different_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), SYNTHETIC_PLAN);
    let results = dir.path().join("r.jsonl");
    let results_arg = results.to_str().unwrap();
    assert!(granscale(&["run", "--plan", &plan, "--out", results_arg, "--max-cells", "1"])
        .status()
        .unwrap()
        .success());
    let other = write_plan_as(dir.path(), "other.json", &SYNTHETIC_PLAN.replace("\"seed\": 5", "\"seed\": 6"));
    let out = output(&mut granscale(&["run", "--plan", &other, "--out", results_arg, "--resume"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plan mismatch"));
    // The partial file is untouched and can still be completed.
    assert_eq!(ResultSet::load(&results).unwrap().cells.len(), 1);
    assert!(granscale(&["run", "--plan", &plan, "--out", results_arg, "--resume"])
        .status()
        .unwrap()
        .success());
    assert!(ResultSet::load(&results).unwrap().is_complete());
}

#[test]
fn weak_report_renders_time_and_speedup_tables() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        &SYNTHETIC_PLAN.replace("\"strong\"", "\"weak\""),
    );
    let results = dir.path().join("r.jsonl");
    let results_arg = results.to_str().unwrap();
    assert!(granscale(&["run", "--plan", &plan, "--out", results_arg])
        .status()
        .unwrap()
        .success());
    assert_eq!(ResultSet::load(&results).unwrap().mode(), ScalingMode::Weak);
    let out = output(&mut granscale(&["report", "--in", results_arg, "--format", "csv"]));
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("problem_size,T_1,T_2\n"));
    assert!(csv.contains("\n\nproblem_size,S_2,scaled_fraction\n"));
}

#[test]
fn report_of_missing_file_fails() {
    let out = output(&mut granscale(&["report", "--in", "/nonexistent/r.jsonl", "--format", "csv"]));
    assert_eq!(out.status.code(), Some(1));
}
