use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;

const SMALL: &str = "\
[simulation]
particle_count = 300
max_iterations = 40
score_alpha_ramp = 0
score_alpha = 1e-3

[output]
snapshot_every = 20
";

fn cli(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mpm-parvi"));
    cmd.args(args).env_remove("MPM_PARVI_THREADS").env("RUST_LOG", "off");
    if let Some(t) = threads {
        cmd.env("MPM_PARVI_THREADS", t);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if path.is_dir() {
            out.extend(listing(&path).into_iter().map(|(n, b)| (format!("{name}/{n}"), b)));
        } else {
            out.push((name, fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn validate_echoes_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = cli(&["validate", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(0));
    let echoed = String::from_utf8(out.stdout).unwrap();
    assert!(echoed.contains("particle_count = 300"));
    assert!(echoed.contains("[material]"));
    let again = write(dir.path(), "echo.toml", &echoed);
    assert_eq!(cli(&["validate", "--config", &again], None).stdout, echoed.as_bytes());
}

#[test]
fn unknown_key_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[simulation]\ntim_step = 0.1\n");
    let out = cli(&["validate", "--config", &cfg], None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("tim_step") && err.contains("line 2"), "{err}");
}

#[test]
fn missing_config_file_is_a_runtime_failure() {
    let out = cli(&["validate", "--config", "/nonexistent/c.toml"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_count_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    for bad in ["0", "-2", "many"] {
        assert_eq!(cli(&["validate", "--config", &cfg], Some(bad)).status.code(), Some(1));
    }
}

#[test]
fn zero_iterations_write_only_the_initial_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &SMALL.replace("max_iterations = 40", "max_iterations = 0"));
    let out_dir = dir.path().join("out");
    let out = cli(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()], Some("1"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let snaps: Vec<String> = fs::read_dir(out_dir.join("snapshots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(snaps, vec!["snapshot_000000.csv".to_string()]);
    let telemetry = fs::read_to_string(out_dir.join("telemetry.csv")).unwrap();
    assert_eq!(telemetry.lines().count(), 2);
    let snap = fs::read_to_string(out_dir.join("snapshots/snapshot_000000.csv")).unwrap();
    assert_eq!(snap.lines().count(), 301);
    assert!(snap.lines().skip(1).all(|l| l.starts_with("0,")));
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = cli(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()], Some("1"));
        assert_eq!(out.status.code(), Some(0));
    }
    let (la, lb) = (listing(&a), listing(&b));
    let names: Vec<&str> = la.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "config.toml",
            "report.json",
            "snapshots/snapshot_000000.csv",
            "snapshots/snapshot_000020.csv",
            "snapshots/snapshot_000040.csv",
            "telemetry.csv"
        ]
    );
    assert_eq!(la, lb);
    let report: serde_json::Value = serde_json::from_slice(&la[1].1).unwrap();
    assert_eq!(report["summary"]["iterations"], 40);
    assert_eq!(report["deterministic"], true);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let blocker = write(dir.path(), "file", "");
    let out = cli(&["run", "--config", &cfg, "--out", &blocker], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diagnose_reports_sample_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("out");
    assert!(cli(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()], Some("1")).status.success());
    let snap = out_dir.join("snapshots/snapshot_000040.csv");
    let out = cli(&["diagnose", "--snapshot", snap.to_str().unwrap(), "--target-config", &cfg], None);
    assert_eq!(out.status.code(), Some(0));
    let records: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0]["record"], "summary");
    assert_eq!(records[0]["count"], 300);
    assert!(records[0]["mmd"]["mmd"].as_f64().unwrap() >= 0.0);
    let counts: u64 = records[1]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 300);

    let csv = cli(
        &["diagnose", "--snapshot", snap.to_str().unwrap(), "--target-config", &cfg, "--format", "csv"],
        None,
    );
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("record,axis,index,x,value\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("kde,")).count(), 256);

    let two_d = write(dir.path(), "d2.toml", "[simulation]\ndimension = 2\ndt = 0.01\n");
    let out = cli(&["diagnose", "--snapshot", snap.to_str().unwrap(), "--target-config", &two_d], None);
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["diagnose", "--snapshot", "/nonexistent.csv", "--target-config", &cfg], None);
    assert_eq!(out.status.code(), Some(2));
}

fn malformed_config() -> impl Strategy<Value = String> {
    let keys = prop_oneof![
        Just("[simulation]\ndt"),
        Just("[simulation]\nparticle_count"),
        Just("[simulation]\nkernel"),
        Just("[grid]\nnodes_per_dim"),
        Just("[material]\nyoungs_modulus"),
        Just("[target]\nname"),
        Just("[simulation]\nno_such_key"),
        Just("[bogus]\nx"),
    ];
    let values = prop_oneof![
        Just("-1".to_string()),
        Just("\"text\"".to_string()),
        Just("0".to_string()),
        Just("1e9".to_string()),
        Just("[1, 2]".to_string()),
        "[a-z]{1,6}".prop_map(|s| format!("\"{s}x\"")),
        Just("= =".to_string()),
    ];
    (keys, values).prop_map(|(k, v)| format!("{k} = {v}\n"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn malformed_configs_exit_with_1(text in malformed_config()) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "c.toml", &text);
        let out = cli(&["validate", "--config", &cfg], None);
        prop_assert_eq!(out.status.code(), Some(1), "{}", text);
        prop_assert!(!out.stderr.is_empty());
    }
}
