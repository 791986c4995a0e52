//! The binary end to end.

use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blemesh"))
}

#[test]
fn preset_run_writes_the_three_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["--scenario", "case3", "--seed", "4", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["packets.csv", "nodes.csv", "summary.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.lines().count() >= 2, "{f} has no rows");
    }
    let packets = fs::read_to_string(dir.path().join("packets.csv")).unwrap();
    assert!(packets.lines().nth(1).unwrap().starts_with("case3,4,proposed,"));
}

#[test]
fn missing_config_names_the_path() {
    let out = bin().args(["--config", "/nonexistent/scenario.toml"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/scenario.toml"));
}

#[test]
fn malformed_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "runs = \"many\"\n").unwrap();
    let out = bin().arg("--config").arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(&*path.to_string_lossy()));

    fs::write(&path, "duration_s = -1.0\n").unwrap();
    let out = bin().arg("--config").arg(&path).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    fs::write(&path, "seed = 11\nruns = 5\nprotocol = \"flooding\"\n").unwrap();
    let out = bin().arg("--config").arg(&path).args(["--seed", "3", "--runs", "2", "--print-config"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = blemesh::config::ScenarioConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg.seed, 3);
    assert_eq!(cfg.runs, 2);
    assert_eq!(cfg.protocol, blemesh::config::Protocol::Flooding);
}

#[test]
fn unknown_scenario_is_rejected() {
    let out = bin().args(["--scenario", "case9"]).output().unwrap();
    assert!(!out.status.success());
}
