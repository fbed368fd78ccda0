mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::*;
use lemsim::cli::{
    parse_scenario, parse_scenario_str, run_command, serialize_scenario, CliError, Overrides,
    SchemaError, BUNDLE_FILES,
};
use lemsim::cosim::ScenarioError;

fn two_bus_text() -> String {
    fs::read_to_string(scenario_path("two_bus.toml")).unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

#[test]
fn golden_scenarios_parse() {
    let s = parse_scenario(&scenario_path("four_bus.toml")).unwrap();
    assert_eq!(s.network.buses().len(), 4);
    assert_eq!(s.network.num_node_phases(), 12);
    assert_eq!(s.smos.len(), 3);
    assert_eq!(s.dcas.len(), 7);
    assert_eq!(s.market.seed, 42);
    assert_eq!(s.num_pm_intervals(), 12);
    assert_eq!(s.num_sm_steps(), 60);

    let t = parse_scenario(&scenario_path("two_bus.toml")).unwrap();
    assert_eq!(t.market.horizon, 10);
    assert_eq!(t.market.dt_p, 5);
}

#[test]
fn serialization_round_trips() {
    for name in ["two_bus.toml", "four_bus.toml"] {
        let s = parse_scenario(&scenario_path(name)).unwrap();
        let again = parse_scenario_str(&serialize_scenario(&s)).unwrap();
        assert_eq!(s, again, "{name}");
    }
}

#[test]
fn branch_to_unknown_bus_is_named() {
    let text = two_bus_text().replace("to = \"1\"", "to = \"9\"");
    let err = parse_scenario_str(&text).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, SchemaError::Network(_)), "{msg}");
    assert!(msg.contains("l01") && msg.contains('9'), "{msg}");
}

#[test]
fn incompatible_cadences_are_rejected() {
    let text = two_bus_text().replace("[market]\n", "[market]\ndt_s = 2\ndt_p = 7\n");
    let err = parse_scenario_str(&text).unwrap_err();
    assert!(
        matches!(err, SchemaError::Scenario(ScenarioError::Cadence { dt_s: 2, dt_p: 7 })),
        "{err}"
    );
}

#[test]
fn unknown_keys_and_versions_are_rejected() {
    let text = two_bus_text().replace("[market]\n", "[market]\nhorizn = 10\n");
    assert!(parse_scenario_str(&text).unwrap_err().to_string().contains("horizn"));
    let text = two_bus_text().replace("schema_version = 1", "schema_version = 2");
    assert!(matches!(parse_scenario_str(&text), Err(SchemaError::Version { found: 2 })));
    let text = two_bus_text().replace("units = \"pu\"\nflex", "units = \"ohm\"\nflex");
    assert!(matches!(parse_scenario_str(&text), Err(SchemaError::UnitMismatch { .. })));
}

#[test]
fn bundle_has_one_row_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_command(&scenario_path("four_bus.toml"), dir.path(), &Overrides::default()).unwrap();
    assert_eq!(out.exit_code, 0);
    for f in BUNDLE_FILES.iter().chain(&["manifest.txt"]) {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    // 12 intervals × 12 node-phases; 60 steps × 7 DCAs.
    assert_eq!(csv_rows(&dir.path().join("voltages.csv")).len(), 144);
    assert_eq!(csv_rows(&dir.path().join("dlmp.csv")).len(), 144);
    assert_eq!(csv_rows(&dir.path().join("tariffs.csv")).len(), 420);
    assert_eq!(csv_rows(&dir.path().join("gaps.csv")).len(), 12);
    let summary = csv_rows(&dir.path().join("summary.csv"));
    let get = |k: &str| summary.iter().find(|r| &r[0] == k).map(|r| r[1].to_string()).unwrap();
    assert_eq!(get("pm_clearings"), "12");
    assert_eq!(get("sm_clearings"), "180");
    assert_eq!(get("completed"), "true");
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("generated_unix = "));
    assert!(manifest.contains("status = \"completed\""));
}

#[test]
fn overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = Overrides {
        xi: Some(0.0),
        horizon: Some(10),
        skip_no_lem_baseline: true,
        ..Overrides::default()
    };
    let out = run_command(&scenario_path("four_bus.toml"), dir.path(), &o).unwrap();
    assert_eq!(out.metrics.pm_clearings, 2);
    assert!(out.metrics.mean_dev_no_lem.is_none());
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("xi = 0.0"), "{manifest}");
    assert!(manifest.contains("horizon = 10"));
    assert!(manifest.contains("no_lem_baseline = false"));
    let v = csv_rows(&dir.path().join("voltages.csv"));
    assert!(v.iter().all(|r| r[4].is_empty()));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario_path("two_bus.toml");
    for sub in ["a", "b"] {
        run_command(&path, &dir.path().join(sub), &Overrides::default()).unwrap();
    }
    for f in BUNDLE_FILES {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let strip = |sub: &str| {
        let m = fs::read_to_string(dir.path().join(sub).join("manifest.txt")).unwrap();
        m.lines().skip(1).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip("a"), strip("b"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let err = run_command(&scenario_path("two_bus.toml"), &blocker.join("out"), &Overrides::default()).unwrap_err();
    assert!(matches!(err, CliError::Io { .. }));
    assert_eq!(err.exit_code(), 4);
}

fn lemsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lemsim"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = lemsim()
        .args(["run", scenario_path("two_bus.toml").to_str().unwrap(), "--out"])
        .arg(dir.path().join("ok"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("2 primary and 10 secondary"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, two_bus_text().replace("to = \"1\"", "to = \"9\"")).unwrap();
    let out = lemsim().args(["run"]).arg(&bad).arg("--out").arg(dir.path().join("bad")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("l01"));

    let halting = dir.path().join("halt.toml");
    fs::write(&halting, two_bus_text().replace("flat = [1.0]", "flat = [1, 1, 1, 1, 1, 40, 40, 40, 40, 40]")).unwrap();
    let out = lemsim().args(["run"]).arg(&halting).arg("--out").arg(dir.path().join("halt")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let manifest = fs::read_to_string(dir.path().join("halt/manifest.txt")).unwrap();
    assert!(manifest.contains("status = \"halted\""));

    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let out = lemsim()
        .args(["run", scenario_path("two_bus.toml").to_str().unwrap(), "--out"])
        .arg(blocker.join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}
