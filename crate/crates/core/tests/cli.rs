use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn ddm(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddm"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_json(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn read_csv(dir: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(dir.join("report.csv")).unwrap();
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn constant_sweep_succeeds_with_exact_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = ddm(&["sweep"], &config("constant_1d.cfg"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS all_rows_solved"));
    let (header, rows) = read_csv(dir.path());
    assert_eq!(rows.len(), 3);
    for column in ["l2_error", "h1_error"] {
        let k = header.iter().position(|h| h == column).unwrap();
        for row in &rows {
            let v: f64 = row[k].parse().unwrap();
            assert!(v <= 1e-10, "{column} = {v}");
        }
    }
}

#[test]
fn csv_numbers_match_json_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = ddm(&["sweep"], &config("neumann_1d.cfg"), dir.path());
    assert!(out.status.code().is_some());
    let json = read_json(dir.path());
    assert_eq!(json["kind"], "sweep");
    let (header, rows) = read_csv(dir.path());
    let json_rows = json["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), json_rows.len());
    let mut compared = 0;
    for (row, jrow) in rows.iter().zip(json_rows) {
        for (name, text) in header.iter().zip(row) {
            let value = jrow.get(name).or_else(|| jrow["metrics"].get(name));
            let Some(Value::Number(n)) = value else { continue };
            let csv_value: f64 = text.parse().unwrap();
            assert_eq!(csv_value.to_bits(), n.as_f64().unwrap().to_bits(), "{name}: {text} vs {n}");
            compared += 1;
        }
    }
    assert!(compared >= 4 * 12, "only {compared} numbers compared");
}

#[test]
fn json_keeps_seventeen_digits() {
    let dir = tempfile::tempdir().unwrap();
    ddm(&["sweep"], &config("constant_1d.cfg"), dir.path());
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(text.contains("\"eps\": 1.0000000000000001e-1"), "{text}");
}

#[test]
fn assertion_failure_exits_one_and_still_writes() {
    // the H1 error on the generic spec decays like eps^(1/2), missing the 0.3 bound
    let dir = tempfile::tempdir().unwrap();
    let out = ddm(&["sweep"], &config("neumann_1d.cfg"), dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL h1_error"));
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn broken_config_exits_two_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.cfg");
    let text = std::fs::read_to_string(config("constant_1d.cfg")).unwrap().replace("alpha = 2", "alpha = two");
    std::fs::write(&cfg, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = ddm(&["sweep"], &cfg, &out_dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    assert!(!out_dir.exists());

    let missing = ddm(&["solve"], &dir.path().join("absent.cfg"), &out_dir);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn gamma_check_without_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ddm(&["gamma-check"], &config("constant_1d.cfg"), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn svg_is_well_formed_for_every_kind() {
    let cases = [
        ("solve", "neumann_1d.cfg"),
        ("sweep", "constant_1d.cfg"),
        ("gamma-check", "neumann_1d.cfg"),
        ("lemma-check", "neumann_1d.cfg"),
    ];
    for (kind, cfg) in cases {
        let dir = tempfile::tempdir().unwrap();
        let out = ddm(&[kind], &config(cfg), dir.path());
        assert!(matches!(out.status.code(), Some(0 | 1)), "{kind}: {:?}", out.status);
        let svg = std::fs::read_to_string(dir.path().join("convergence.svg")).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap_or_else(|e| panic!("{kind}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(read_json(dir.path())["kind"], kind);
    }
}

#[test]
fn solve_csv_holds_both_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let out = ddm(&["solve"], &config("neumann_1d.cfg"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(dir.path());
    assert_eq!(header, ["x", "u_eps", "u_0"]);
    assert!(rows.len() > 100);
}

#[test]
fn max_nodes_override_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ddm"))
        .args(["sweep", "--max-nodes", "10", "--config"])
        .arg(config("constant_1d.cfg"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
