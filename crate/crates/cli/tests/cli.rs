use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ergocert_core::report::CsvTable;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ergocert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergocert")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn report_on_two_state_passes_with_alpha() {
    let f = fixture("two_state.json");
    let out = ergocert(&["report", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&out);
    let doeblin = rep["certificates"].as_array().unwrap().iter().find(|c| c["name"] == "doeblin").unwrap();
    assert_eq!(doeblin["data"]["alpha"].as_f64(), Some(0.7));
    assert!(rep["envelopes"].as_array().unwrap().iter().all(|e| e["verification"]["passed"] == true));
}

#[test]
fn row_sum_violation_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"schema_version": 1, "name": "bad", "kernel": [[0.5, 0.4], [0.5, 0.5]]}"#).unwrap();
    let out = ergocert(&["report", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel[0]") && err.contains("0.9"), "{err}");
}

#[test]
fn malformed_input_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"schema_version": 1, "name": "bad", "kernel": [[1.0]], "grids": {"n_max": -1}}"#).unwrap();
    let out = ergocert(&["certify", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grids.n_max"));
    std::fs::write(&p, "{not json").unwrap();
    assert_eq!(ergocert(&["certify", p.to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(ergocert(&["certify", "/nonexistent/model.json"]).status.code(), Some(3));
    assert_eq!(ergocert(&["certify"]).status.code(), Some(3));
}

#[test]
fn failing_coupling_exits_one_with_witness() {
    let p = data("coupling_fails.json");
    let out = ergocert(&["report", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let rep = json(&out);
    assert_eq!(rep["status"], "certification_failure");
    let c = rep["certificates"].as_array().unwrap().iter().find(|c| c["name"] == "local_coupling").unwrap();
    assert_eq!(c["found"], false);
    let w = &c["data"]["witness"];
    assert_eq!(w["kind"], "coupling");
    assert_eq!((w["x"].as_u64(), w["y"].as_u64()), (Some(0), Some(1)));
    assert!(w["gamma_h"].as_f64().unwrap() >= 1.0);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let f = fixture("three_state_harris.json");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |d: &Path| ergocert(&["report", f.to_str().unwrap(), "--seed", "11", "--out", d.to_str().unwrap()]);
    let (ra, rb) = (run(a.path()), run(b.path()));
    assert_eq!(ra.status.code(), Some(0));
    assert_eq!(ra.stdout, rb.stdout);
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 2);
    for n in names {
        assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
    let other = ergocert(&["report", f.to_str().unwrap(), "--seed", "12"]);
    assert_ne!(other.stdout, ra.stdout);
}

#[test]
fn csv_round_trip_reproduces_verification() {
    let f = fixture("three_state_harris.json");
    let d = tempfile::tempdir().unwrap();
    let out = ergocert(&["report", f.to_str().unwrap(), "--seed", "3", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rep = json(&out);
    for t in rep["trajectories"].as_array().unwrap() {
        let text = std::fs::read_to_string(d.path().join(t["csv"].as_str().unwrap())).unwrap();
        let table = CsvTable::parse(&text).unwrap();
        assert_eq!(table.to_csv(), text);
        let (tv, v1, passed) = table.verify();
        assert_eq!(Some(tv), t["tv_ratio"].as_f64());
        assert_eq!(Some(v1), t["v1_ratio"].as_f64());
        assert_eq!(Some(passed), t["passed"].as_bool());
    }
}

#[test]
fn simulate_prints_a_decay_table() {
    let f = fixture("two_state.json");
    let out = ergocert(&["simulate", f.to_str().unwrap(), "--n", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let table = CsvTable::parse(&text).unwrap();
    assert_eq!(table.rows.len(), 11);
    // δ₀ − δ₁: TV = 2·0.3ⁿ
    for r in &table.rows {
        assert!((r.tv - 2.0 * 0.3f64.powi(r.n_or_t as i32)).abs() < 1e-14);
    }
}

#[test]
fn certify_and_rate_emit_json() {
    let f = fixture("reflected_walk.json");
    let d = tempfile::tempdir().unwrap();
    let out = ergocert(&["rate", f.to_str().unwrap(), "--n-max", "50", "--out", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&out);
    assert!(!rep["envelopes"].as_array().unwrap().is_empty());
    let csv = std::fs::read_to_string(d.path().join("rates.csv")).unwrap();
    assert!(csv.starts_with("n_or_t,"));
    assert_eq!(csv.lines().count(), 52);
    let f = fixture("block_diagonal.json");
    let out = ergocert(&["certify", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rep = json(&out);
    let u = rep["checks"].as_array().unwrap().iter().find(|c| c["name"] == "uniqueness").unwrap();
    assert_eq!(u["data"]["multiplicity"], 2);
}
