mod common;

use std::fs;
use std::process::Command;

use common::scenario_path;

fn meshopt(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_meshopt")).args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn compare_writes_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let small = scenario_path("small.toml");
    let stdout = meshopt(&[
        "compare",
        "--scenario",
        small.to_str().unwrap(),
        "--scheme",
        "icalo,single,cca",
        "--seeds",
        "0..3",
        "--epochs",
        "30",
        "--out",
        dir.path().to_str().unwrap(),
        "--svg",
    ]);
    assert!(stdout.contains("3 seeds x 30 epochs"));
    let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 9);
    assert!(dir.path().join("cdf.svg").exists());
}

#[test]
fn oracle_and_resilience_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let small = scenario_path("small.toml");
    let stdout = meshopt(&["oracle", "--scenario", small.to_str().unwrap(), "--seeds", "4", "--out", out]);
    assert!(stdout.contains("seed 4: 108 configurations, 36 feasible"), "{stdout}");
    assert!(dir.path().join("oracle.csv").exists());

    let res = scenario_path("resilience.toml");
    let stdout = meshopt(&["resilience", "--scenario", res.to_str().unwrap(), "--seeds", "0..2", "--out", out]);
    assert!(stdout.contains("non-increasing in"));
    let phases = fs::read_to_string(dir.path().join("phases.csv")).unwrap();
    assert_eq!(phases.lines().count(), 2 + 2 * 4);
}

#[test]
fn unknown_scheme_is_an_error() {
    let small = scenario_path("small.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_meshopt"))
        .args(["run", "--scenario", small.to_str().unwrap(), "--scheme", "greedy"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("greedy"));
}
