//! JSONL ingestion into a session-grouped, read-only event store.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::SignalConfig;

/// One logged interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "sid")]
    pub session_id: String,
    /// Epoch milliseconds.
    #[serde(rename = "ts")]
    pub timestamp: u64,
    pub action: String,
    #[serde(rename = "rid", skip_serializing_if = "Option::is_none", default)]
    pub record_id: Option<String>,
    /// 1-based position in the result list the record was clicked from.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank: Option<u32>,
    #[serde(rename = "q", skip_serializing_if = "Option::is_none", default)]
    pub query: Option<String>,
}

impl Event {
    pub fn new(session_id: impl Into<String>, timestamp: u64, action: impl Into<String>) -> Self {
        Event {
            session_id: session_id.into(),
            timestamp,
            action: action.into(),
            record_id: None,
            rank: None,
            query: None,
        }
    }

    pub fn with_record(mut self, record_id: impl Into<String>, rank: Option<u32>) -> Self {
        self.record_id = Some(record_id.into());
        self.rank = rank;
        self
    }

    pub fn with_query(mut self, query: impl Into<String>) -> Self {
        self.query = Some(query.into());
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty line")]
    EmptyLine,
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("line is not a JSON object")]
    NotAnObject,
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("{0} must be a string")]
    NotAString(&'static str),
    #[error("ts must be a non-negative integer")]
    InvalidTimestamp,
    #[error("rank must be an integer >= 1")]
    InvalidRank,
    #[error("rank without record_id")]
    RankWithoutRecord,
}

fn take_string(
    map: &mut serde_json::Map<String, Value>,
    key: &'static str,
) -> Result<Option<String>, ParseError> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(_) => Err(ParseError::NotAString(key)),
    }
}

fn required_string(
    map: &mut serde_json::Map<String, Value>,
    key: &'static str,
) -> Result<String, ParseError> {
    let value = take_string(map, key)?.ok_or(ParseError::Missing(key))?;
    if value.is_empty() {
        return Err(ParseError::Empty(key));
    }
    Ok(value)
}

/// Parses one JSONL line with keys `sid`, `ts`, `action` and optional
/// `rid`, `rank`, `q`. Other keys are ignored.
pub fn parse_event(line: &str) -> Result<Event, ParseError> {
    if line.trim().is_empty() {
        return Err(ParseError::EmptyLine);
    }
    let value: Value =
        serde_json::from_str(line).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let Value::Object(mut map) = value else {
        return Err(ParseError::NotAnObject);
    };

    let session_id = required_string(&mut map, "sid")?;
    let action = required_string(&mut map, "action")?;
    let timestamp = match map.remove("ts") {
        None | Some(Value::Null) => return Err(ParseError::Missing("ts")),
        Some(Value::Number(n)) => n.as_u64().ok_or(ParseError::InvalidTimestamp)?,
        Some(_) => return Err(ParseError::InvalidTimestamp),
    };
    let record_id = take_string(&mut map, "rid")?;
    let rank = match map.remove("rank") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => {
            let r = n.as_u64().ok_or(ParseError::InvalidRank)?;
            if r == 0 || r > u32::MAX as u64 {
                return Err(ParseError::InvalidRank);
            }
            Some(r as u32)
        }
        Some(_) => return Err(ParseError::InvalidRank),
    };
    if rank.is_some() && record_id.is_none() {
        return Err(ParseError::RankWithoutRecord);
    }
    let query = take_string(&mut map, "q")?;

    Ok(Event {
        session_id,
        timestamp,
        action,
        record_id,
        rank,
        query,
    })
}

/// Events of one session, in session order.
#[derive(Debug, Clone, Copy)]
pub struct Session<'a> {
    pub id: &'a str,
    pub events: &'a [Event],
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SessionSpan {
    id: String,
    range: Range<usize>,
}

/// Immutable session-grouped event store.
///
/// Sessions appear in order of first appearance in the input; events inside
/// a session are stably sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventLog {
    events: Vec<Event>,
    spans: Vec<SessionSpan>,
    index: HashMap<String, usize>,
}

impl EventLog {
    pub fn from_events(events: Vec<Event>) -> Self {
        let mut order: HashMap<String, usize> = HashMap::new();
        let mut keyed: Vec<(usize, usize, Event)> = Vec::with_capacity(events.len());
        for (pos, event) in events.into_iter().enumerate() {
            let next = order.len();
            let group = *order.entry(event.session_id.clone()).or_insert(next);
            keyed.push((group, pos, event));
        }
        // (group, timestamp, input position) gives a stable per-session sort.
        keyed.sort_by_key(|(group, pos, e)| (*group, e.timestamp, *pos));

        let mut spans: Vec<SessionSpan> = Vec::with_capacity(order.len());
        let mut events = Vec::with_capacity(keyed.len());
        for (i, (group, _, event)) in keyed.into_iter().enumerate() {
            if spans.len() == group {
                spans.push(SessionSpan {
                    id: event.session_id.clone(),
                    range: i..i,
                });
            }
            spans[group].range.end = i + 1;
            events.push(event);
        }
        let index = spans
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        EventLog {
            events,
            spans,
            index,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Total number of events.
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn num_sessions(&self) -> usize {
        self.spans.len()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn sessions(&self) -> impl ExactSizeIterator<Item = Session<'_>> + '_ {
        self.spans.iter().map(move |span| Session {
            id: &span.id,
            events: &self.events[span.range.clone()],
        })
    }

    pub fn session_at(&self, i: usize) -> Session<'_> {
        let span = &self.spans[i];
        Session {
            id: &span.id,
            events: &self.events[span.range.clone()],
        }
    }

    pub fn session(&self, id: &str) -> Option<Session<'_>> {
        self.index.get(id).map(|&i| self.session_at(i))
    }

    /// Range of `id`'s events within [`EventLog::events`].
    pub fn session_range(&self, id: &str) -> Option<Range<usize>> {
        self.index.get(id).map(|&i| self.spans[i].range.clone())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub total_lines: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// First `rejection_cap` rejections, in line order.
    pub rejections: Vec<Rejection>,
    pub rejection_cap: usize,
    /// Labels outside every configured vocabulary, with counts.
    pub unknown_actions: BTreeMap<String, usize>,
}

impl ValidationReport {
    fn new(rejection_cap: usize) -> Self {
        ValidationReport {
            total_lines: 0,
            accepted: 0,
            rejected: 0,
            rejections: Vec::new(),
            rejection_cap,
            unknown_actions: BTreeMap::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        self.rejected == 0
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total_lines: {}", self.total_lines)?;
        writeln!(f, "accepted: {}", self.accepted)?;
        writeln!(f, "rejected: {}", self.rejected)?;
        for r in &self.rejections {
            writeln!(f, "  line {}: {}", r.line, r.reason)?;
        }
        if self.rejected > self.rejections.len() {
            writeln!(
                f,
                "  ... {} more rejections not shown",
                self.rejected - self.rejections.len()
            )?;
        }
        if !self.unknown_actions.is_empty() {
            writeln!(f, "unknown_actions:")?;
            for (action, count) in &self.unknown_actions {
                writeln!(f, "  {action}: {count}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions<'a> {
    pub rejection_cap: usize,
    /// When set, labels unknown to this config are tallied.
    pub vocabulary: Option<&'a SignalConfig>,
}

impl Default for LoadOptions<'_> {
    fn default() -> Self {
        LoadOptions {
            rejection_cap: 100,
            vocabulary: None,
        }
    }
}

pub fn load_log<R: BufRead>(source: R) -> io::Result<(EventLog, ValidationReport)> {
    load_log_with(source, &LoadOptions::default())
}

/// Reads every line, keeping parseable events and recording the rest.
/// Only an I/O failure of the source aborts the load.
pub fn load_log_with<R: BufRead>(
    source: R,
    options: &LoadOptions<'_>,
) -> io::Result<(EventLog, ValidationReport)> {
    let lines = source.lines().collect::<io::Result<Vec<String>>>()?;
    let parsed: Vec<Result<Event, ParseError>> =
        lines.par_iter().map(|line| parse_event(line)).collect();
    drop(lines);

    let mut report = ValidationReport::new(options.rejection_cap);
    report.total_lines = parsed.len();
    let mut events = Vec::with_capacity(parsed.len());
    for (i, result) in parsed.into_iter().enumerate() {
        match result {
            Ok(event) => {
                if let Some(config) = options.vocabulary {
                    if !config.knows(&event.action) {
                        *report
                            .unknown_actions
                            .entry(event.action.clone())
                            .or_default() += 1;
                    }
                }
                events.push(event);
            }
            Err(err) => {
                report.rejected += 1;
                if report.rejections.len() < options.rejection_cap {
                    report.rejections.push(Rejection {
                        line: i + 1,
                        reason: err.to_string(),
                    });
                }
            }
        }
    }
    report.accepted = events.len();
    Ok((EventLog::from_events(events), report))
}
