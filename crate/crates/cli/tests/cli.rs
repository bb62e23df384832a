use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dynex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.toml")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs_and_analyze_accepts_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dynex(&[
        "run",
        "--config",
        s(&small_config()),
        "--seed",
        "3",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("reports="));
    for f in [
        "reports.csv",
        "walk_stats.csv",
        "events.jsonl",
        "final_snapshot.txt",
        "summary.json",
        "audit.json",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let reports = fs::read_to_string(dir.path().join("reports.csv")).unwrap();
    assert!(reports.starts_with("phase,t_start,t_end,"));

    let events = dir.path().join("events.jsonl");
    let ok = dynex(&["analyze", "--events", s(&events)]);
    assert_eq!(ok.status.code(), Some(0));
    let audit: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(audit["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn analyze_flags_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dynex(&["run", "--config", s(&small_config()), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("events.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    // Replaying an accepted request establishes a link that already exists.
    let accepted = text
        .lines()
        .find(|l| l.contains("\"ev\":\"request\"") && l.contains("\"outcome\":\"established\""))
        .expect("some request was accepted")
        .to_string();
    let mut lines: Vec<&str> = text.lines().collect();
    let at = lines.iter().position(|l| *l == accepted).unwrap();
    lines.insert(at + 1, &accepted);
    let tampered = dir.path().join("tampered.jsonl");
    fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let bad = dynex(&["analyze", "--events", s(&tampered)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_writes_runs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.toml");
    fs::write(&grid, "[adversary]\nbeta = [0.0, 0.05]\n").unwrap();
    let out = dynex(&[
        "sweep",
        "--config",
        s(&small_config()),
        "--grid",
        s(&grid),
        "--seeds",
        "1..=2",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("trials=4 failures=0"));
    let runs = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert!(runs.starts_with("cell,seed,phase,"));
    let cells: std::collections::BTreeSet<&str> = runs.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(cells.len(), 2);
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let missing = dynex(&["run", "--config", "/nonexistent.toml", "--out", "/tmp/x"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_range = dynex(&["sweep", "--config", "a", "--grid", "b", "--seeds", "5..5"]);
    assert_eq!(bad_range.status.code(), Some(1));
    let help = dynex(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
}
