mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::fixture;
use tempfile::TempDir;

fn iirlog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iirlog")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn preset() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/digital_library.json")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Data lines of a CSV output, without comment lines.
fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn shipped_config_matches_preset() {
    let shipped = iirlog::SignalConfig::from_path(preset()).unwrap();
    assert_eq!(shipped, iirlog::SignalConfig::digital_library());
}

#[test]
fn validate_exit_codes() {
    let t1 = fixture("worked_example.jsonl");
    let cfg = fixture("worked_example_config.json");
    let ok = iirlog(&["validate", "--log", path(&t1), "--config", path(&cfg)]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("rejected: 0"));

    let dir = TempDir::new().unwrap();
    let bad = write(
        &dir,
        "bad.jsonl",
        "{\"sid\":\"a\",\"ts\":1,\"action\":\"search\"}\nnot json\n{\"sid\":\"a\",\"ts\":2,\"action\":\"search\"}\n",
    );
    let out = iirlog(&["validate", "--log", path(&bad), "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("line 2:"), "{}", stdout(&out));

    let no_flag = iirlog(&["validate", "--log", path(&t1)]);
    assert_eq!(no_flag.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_flag.stderr).contains("Usage"));

    let missing = iirlog(&["validate", "--log", path(&t1), "--config", "/nonexistent/c.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("usage"));

    let no_log = iirlog(&["validate", "--log", "/nonexistent/l.jsonl", "--config", path(&cfg)]);
    assert_eq!(no_log.status.code(), Some(3));
}

#[test]
fn usefulness_on_worked_example() {
    let out = iirlog(&[
        "usefulness",
        "--log",
        path(&fixture("worked_example.jsonl")),
        "--config",
        path(&fixture("worked_example_config.json")),
        "--n",
        "5",
        "--negative-set",
        "logout",
        "--raw-local",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows = data_lines(&text);
    assert_eq!(rows[0], iirlog::usefulness::CURVE_CSV_HEADER);
    assert_eq!(rows.len(), 7);
    assert!(rows[6].starts_with("5,2,3,0.666667,1,3,0.333333,"), "{}", rows[6]);
    assert!(text.contains("# local_usefulness 0.500000 (3/6)"));
    assert!(text.contains("# raw_usage_ratio 0.500000 (3/6)"));
    assert!(text.contains("# negative_adjusted n=5 0.333333"));
    let manifest = text.lines().last().unwrap();
    assert!(manifest.starts_with("# manifest {"), "{manifest}");
    assert!(manifest.contains("\"sha256\""));
}

#[test]
fn usefulness_on_empty_log_is_header_only() {
    let dir = TempDir::new().unwrap();
    let empty = write(&dir, "empty.jsonl", "");
    let out = iirlog(&["usefulness", "--log", path(&empty), "--config", path(&preset())]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(data_lines(&stdout(&out)), [iirlog::usefulness::CURVE_CSV_HEADER]);
}

#[test]
fn strict_mode_fails_on_rejected_lines() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.jsonl", "{}\n");
    let cfg = preset();
    let args = ["usefulness", "--log", path(&bad), "--config", path(&cfg)];
    assert_eq!(iirlog(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(iirlog(&strict).status.code(), Some(1));
}

fn precision(log: &Path, extra: &[&str]) -> String {
    let cfg = preset();
    let mut args = vec!["precision", "--log", path(log), "--config", path(&cfg)];
    args.extend_from_slice(extra);
    let out = iirlog(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    stdout(&out)
}

fn column<'a>(row: &'a str, name: &str) -> &'a str {
    let idx = iirlog::relevance::PRECISION_CSV_HEADER
        .split(',')
        .position(|c| c == name)
        .unwrap();
    row.split(',').nth(idx).unwrap()
}

#[test]
fn precision_fixtures() {
    let dir = TempDir::new().unwrap();
    let zero = write(
        &dir,
        "zero.jsonl",
        concat!(
            "{\"sid\":\"a\",\"ts\":0,\"action\":\"CTS_select\"}\n",
            "{\"sid\":\"a\",\"ts\":1,\"action\":\"CTS_search\"}\n",
            "{\"sid\":\"b\",\"ts\":0,\"action\":\"CTS_search\"}\n",
        ),
    );
    let text = precision(&zero, &["--unit", "window-split", "--min-signals", "0"]);
    let rows = data_lines(&text);
    assert_eq!(rows[0], iirlog::relevance::PRECISION_CSV_HEADER);
    for row in &rows[1..] {
        assert_eq!(column(row, "mean_p_at_k"), "0.000000");
        assert_eq!(column(row, "map_at_k"), "0.000000");
        assert_eq!(column(row, "z_map"), "");
    }

    let single = write(
        &dir,
        "single.jsonl",
        concat!(
            "{\"sid\":\"a\",\"ts\":0,\"action\":\"CTS_search\"}\n",
            "{\"sid\":\"a\",\"ts\":1,\"action\":\"view_record\",\"rid\":\"d1\",\"rank\":1}\n",
            "{\"sid\":\"a\",\"ts\":2,\"action\":\"view_record\",\"rid\":\"d3\",\"rank\":3}\n",
        ),
    );
    let text = precision(&single, &["--unit", "whole-session-split"]);
    let row = data_lines(&text)[2];
    assert_eq!(column(row, "arm"), "without_service");
    assert_eq!(column(row, "map_at_k"), "0.833333");
    assert_eq!(column(row, "mean_p_at_k"), "0.100000");
}

#[test]
fn nosplit_pools_disjoint_searches() {
    let dir = TempDir::new().unwrap();
    let log = write(
        &dir,
        "two.jsonl",
        concat!(
            "{\"sid\":\"a\",\"ts\":0,\"action\":\"CTS_select\"}\n",
            "{\"sid\":\"a\",\"ts\":1,\"action\":\"CTS_search\"}\n",
            "{\"sid\":\"a\",\"ts\":2,\"action\":\"view_record\",\"rid\":\"d1\",\"rank\":1}\n",
            "{\"sid\":\"a\",\"ts\":3,\"action\":\"search\"}\n",
            "{\"sid\":\"a\",\"ts\":4,\"action\":\"view_record\",\"rid\":\"d2\",\"rank\":2}\n",
            "{\"sid\":\"a\",\"ts\":5,\"action\":\"view_record\",\"rid\":\"d3\",\"rank\":4}\n",
        ),
    );
    let text = precision(&log, &["--unit", "window-split", "--unit", "window-nosplit", "--n", "5"]);
    let rows = data_lines(&text);
    let split = rows.iter().find(|r| r.starts_with("window_split(5),") && r.contains("with_service")).unwrap();
    let pooled = rows.iter().find(|r| r.starts_with("window_nosplit(5),") && r.contains("with_service")).unwrap();
    assert_eq!(column(pooled, "mean_p_at_k"), "0.150000");
    // Split mean of 1/20 and 2/20.
    assert_eq!(column(split, "mean_p_at_k"), "0.075000");
    assert_eq!(column(split, "mean_searches"), "2.000000");
}

fn patterns(extra: &[&str]) -> Output {
    let (log, cfg) = (fixture("worked_example.jsonl"), fixture("worked_example_config.json"));
    let mut args = vec!["patterns", "--log", path(&log), "--config", path(&cfg)];
    args.extend_from_slice(extra);
    iirlog(&args)
}

#[test]
fn patterns_outputs() {
    let csv = patterns(&["--format", "csv", "--node-threshold", "0", "--success-threshold", "0"]);
    assert_eq!(csv.status.code(), Some(0));
    let text = stdout(&csv);
    assert_eq!(text.lines().next(), Some("path,count,probability"));
    assert!(text.contains("search>>view_record"));

    let dot = stdout(&patterns(&["--node-threshold", "1", "--success-threshold", "1"]));
    assert!(dot.starts_with("digraph patterns {"));
    assert_eq!(dot.matches("->").count(), 0);
    assert_eq!(dot.matches("[label=").count(), 1);
    assert!(dot.lines().last().unwrap().starts_with("// manifest {"));

    let bad = patterns(&["--node-threshold", "2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn patterns_without_windows_is_root_only() {
    let dir = TempDir::new().unwrap();
    let log = write(&dir, "l.jsonl", "{\"sid\":\"a\",\"ts\":0,\"action\":\"search\"}\n");
    let out = iirlog(&["patterns", "--log", path(&log), "--config", path(&preset())]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).matches("[label=").count(), 1);
}

fn simulate(dir: &TempDir, params: &str, out: &str) -> (Vec<u8>, serde_json::Value) {
    let p = write(dir, &format!("{out}.params.json"), params);
    let log = dir.path().join(out);
    let status = iirlog(&["simulate", "--params", path(&p), "--out", path(&log)]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let sidecar = fs::read_to_string(iirlog::cli::sidecar_path(&log)).unwrap();
    (fs::read(&log).unwrap(), serde_json::from_str(&sidecar).unwrap())
}

#[test]
fn simulate_outputs() {
    let dir = TempDir::new().unwrap();
    let (empty, _) = simulate(&dir, r#"{"sessions": 0}"#, "empty.jsonl");
    assert!(empty.is_empty());

    let params = r#"{"sessions": 300, "seed": 5}"#;
    let (a, side_a) = simulate(&dir, params, "a.jsonl");
    let (b, side_b) = simulate(&dir, params, "b.jsonl");
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(side_a["expected"], side_b["expected"]);
    assert_eq!(side_a["manifest"]["inputs"][0]["sha256"], side_b["manifest"]["inputs"][0]["sha256"]);

    let (_, null) = simulate(&dir, r#"{"sessions": 10, "service_lift": 0.0, "expected_n": [7]}"#, "null.jsonl");
    let m = &null["expected"][0];
    assert_eq!(m["n"], 7);
    assert_eq!(m["global_with"], m["global_without"]);

    let bad = write(&dir, "bad.json", r#"{"service_lift": 2.0}"#);
    let out = iirlog(&["simulate", "--params", path(&bad), "--out", path(&dir.path().join("x.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulated_log_round_trips_through_validate() {
    let dir = TempDir::new().unwrap();
    simulate(&dir, r#"{"sessions": 50, "seed": 1}"#, "s.jsonl");
    let log = dir.path().join("s.jsonl");
    let out = iirlog(&["validate", "--log", path(&log), "--config", path(&preset())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!stdout(&out).contains("unknown_actions"));
}
