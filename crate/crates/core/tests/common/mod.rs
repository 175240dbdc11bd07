#![allow(dead_code)]

use std::path::PathBuf;

use iirlog::event_log::load_log;
use iirlog::{EventLog, SignalConfig};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The six search processes of the worked usefulness example, one per session.
pub fn worked_example() -> (EventLog, SignalConfig) {
    let text = std::fs::read_to_string(fixture("worked_example.jsonl")).unwrap();
    let (log, report) = load_log(text.as_bytes()).unwrap();
    assert!(report.is_clean());
    let config = SignalConfig::from_path(fixture("worked_example_config.json")).unwrap();
    (log, config)
}
