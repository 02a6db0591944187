use std::path::Path;
use std::process::{Command, Output};

fn qdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdlab"))
        .args(args)
        .env("QDLAB_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn list_experiments_names_every_kind() {
    let out = qdlab(&["list-experiments"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for k in ["discrepancy_decay", "covering", "brs_remainder", "lyapunov_scan", "dt_integral", "transport_beta", "transport_xi", "identities"] {
        assert!(text.contains(k), "{k}");
    }
}

#[test]
fn run_prints_csv_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "id.json", r#"{"kind": "identities", "params": {"max_s": 2, "max_r": 2}}"#);
    let out = qdlab(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("s,r,low,top,product,ok\n"));
    assert_eq!(csv.lines().count(), 1 + 2 + 4);
}

#[test]
fn run_writes_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cov.json",
        r#"{"kind": "covering", "frequency": "golden", "params": {"radii": [0.1, 0.05, 0.02, 0.01], "mmax": 100000}}"#,
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(qdlab(&["run", &cfg, "--out", a.to_str().unwrap()]).status.success());
    assert!(qdlab(&["run", &cfg, "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(a.with_extension("json").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"kind": "covering", "frequency": "0.x", "params": {"radii": [0.1], "mmax": 5}}"#,
    );
    let out = qdlab(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("`frequency`"));
    let out = qdlab(&["run", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "uncovered.json",
        r#"{"kind": "covering", "frequency": "golden", "params": {"radii": [0.001], "mmax": 10}}"#,
    );
    let out = qdlab(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("not_covered"));
}

#[test]
fn accept_reports_and_fails_on_tampered_tolerance() {
    let out = qdlab(&["accept", "--only", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("criterion 1") && text.contains("PASS") && text.contains(" s /"));

    let dir = tempfile::tempdir().unwrap();
    let tol = write(dir.path(), "tol.json", r#"{"herman_margin": -1.0}"#);
    let out = qdlab(&["accept", "--only", "7", "--tolerances", &tol]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("FAIL"));

    let bad = write(dir.path(), "bad.json", r#"{"no_such_tolerance": 1}"#);
    assert_eq!(qdlab(&["accept", "--tolerances", &bad]).status.code(), Some(2));
}
