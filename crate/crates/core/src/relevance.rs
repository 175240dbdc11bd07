//! Click-through precision (P@k, AP@k, MAP@k) over different session units.
//!
//! Clicks stand in for relevance judgements. Each search opens an
//! attribution scope and later qualifying clicks join the most recent scope.
//! A window can be scored per search ("split") or as one pooled pseudo-search
//! ("no split").

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::SignalConfig;
use crate::event_log::{Event, EventLog};
use crate::sessionize::{baseline_anchors, baseline_windows, service_windows, EventWindow};
use crate::stats::{SampleSummary, TestResult};

/// Result page size of the target portal.
pub const DEFAULT_K: usize = 20;
pub const DEFAULT_WINDOW: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelevanceError {
    #[error("invalid unit spec: {0}")]
    InvalidSpec(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    /// Only `click_actions`.
    ClickThrough,
    /// `click_actions` plus every success action.
    AllPositive,
}

impl SignalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignalMode::ClickThrough => "click_through",
            SignalMode::AllPositive => "all_positive",
        }
    }

    fn qualifies(&self, action: &str, config: &SignalConfig) -> bool {
        config.click_actions.contains(action)
            || (*self == SignalMode::AllPositive && config.is_success(action))
    }
}

impl fmt::Display for SignalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalMode {
    type Err = RelevanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "click_through" => Ok(SignalMode::ClickThrough),
            "all_positive" => Ok(SignalMode::AllPositive),
            _ => Err(RelevanceError::Unknown {
                kind: "signal mode",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    /// Sessions with vs. without service usage, scored per search.
    WholeSessionSplit,
    /// As above, keeping only searches with at least `min_signals` signals.
    FilteredProcesses,
    /// The single search scope at or after each anchor.
    SucceedingProcess,
    /// Anchor windows scored per search.
    WindowSplit,
    /// Anchor windows pooled into one pseudo-search.
    WindowNoSplit,
}

impl UnitKind {
    pub const ALL: [UnitKind; 5] = [
        UnitKind::WholeSessionSplit,
        UnitKind::FilteredProcesses,
        UnitKind::SucceedingProcess,
        UnitKind::WindowSplit,
        UnitKind::WindowNoSplit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UnitKind::WholeSessionSplit => "whole_session_split",
            UnitKind::FilteredProcesses => "filtered_processes",
            UnitKind::SucceedingProcess => "succeeding_process",
            UnitKind::WindowSplit => "window_split",
            UnitKind::WindowNoSplit => "window_nosplit",
        }
    }

    pub fn is_window(&self) -> bool {
        matches!(self, UnitKind::WindowSplit | UnitKind::WindowNoSplit)
    }
}

impl FromStr for UnitKind {
    type Err = RelevanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UnitKind::ALL
            .into_iter()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| RelevanceError::Unknown {
                kind: "unit",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UnitSpec {
    pub unit: UnitKind,
    /// Required for window units, absent otherwise.
    pub window_n: Option<usize>,
    pub signal_mode: SignalMode,
    /// Searches with fewer qualifying clicks are dropped.
    pub min_signals: usize,
}

impl UnitSpec {
    /// Unit spec with defaults: window of 7 for window units, and a one-signal
    /// filter for [`UnitKind::FilteredProcesses`].
    pub fn new(unit: UnitKind, signal_mode: SignalMode) -> Self {
        UnitSpec {
            unit,
            window_n: unit.is_window().then_some(DEFAULT_WINDOW),
            signal_mode,
            min_signals: usize::from(unit == UnitKind::FilteredProcesses),
        }
    }

    pub fn with_window(mut self, n: usize) -> Self {
        self.window_n = Some(n);
        self
    }

    pub fn with_min_signals(mut self, min_signals: usize) -> Self {
        self.min_signals = min_signals;
        self
    }

    pub fn validate(&self) -> Result<(), RelevanceError> {
        if self.unit.is_window() != self.window_n.is_some() {
            return Err(RelevanceError::InvalidSpec(format!(
                "window_n must be set exactly for window units ({})",
                self.unit.as_str()
            )));
        }
        Ok(())
    }

    /// `window_split(7)` style label.
    pub fn label(&self) -> String {
        match self.window_n {
            Some(n) => format!("{}({n})", self.unit.as_str()),
            None => self.unit.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Click {
    pub record_id: String,
    /// Rank of the first qualifying click on this record.
    pub rank: u32,
    /// At least one of the record's clicks was the view action.
    pub from_view: bool,
}

/// Qualifying clicks of one unit, deduplicated by record.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ClickSet {
    pub unit_id: String,
    pub clicks: Vec<Click>,
}

impl ClickSet {
    pub fn new(unit_id: impl Into<String>) -> Self {
        ClickSet {
            unit_id: unit_id.into(),
            clicks: Vec::new(),
        }
    }

    /// Adds a click unless the record is already present; a later view click
    /// still marks an existing record as rank-bearing.
    pub fn insert(&mut self, record_id: &str, rank: u32, is_view: bool) {
        match self.clicks.iter_mut().find(|c| c.record_id == record_id) {
            Some(existing) => existing.from_view |= is_view,
            None => self.clicks.push(Click {
                record_id: record_id.to_string(),
                rank,
                from_view: is_view,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    /// Clicks usable for rank-sensitive precision.
    pub fn rank_bearing(&self) -> impl Iterator<Item = &Click> {
        self.clicks.iter().filter(|c| c.from_view)
    }

    fn add_event(&mut self, event: &Event, config: &SignalConfig, mode: SignalMode) {
        if !mode.qualifies(&event.action, config) {
            return;
        }
        if let (Some(rid), Some(rank)) = (&event.record_id, event.rank) {
            self.insert(rid, rank, event.action == config.view_action);
        }
    }
}

/// One click set per search event; clicks before the first search are
/// dropped. Unit ids are `<session>#<position of the search>`.
pub fn attribute_clicks(events: &[Event], config: &SignalConfig, mode: SignalMode) -> Vec<ClickSet> {
    let mut scopes: Vec<ClickSet> = Vec::new();
    for (i, event) in events.iter().enumerate() {
        if config.is_search(&event.action) {
            scopes.push(ClickSet::new(format!("{}#{i}", event.session_id)));
        } else if let Some(scope) = scopes.last_mut() {
            scope.add_event(event, config, mode);
        }
    }
    scopes
}

/// All qualifying clicks of a window pooled into one set.
pub fn pool_clicks(window: &EventWindow<'_>, config: &SignalConfig, mode: SignalMode) -> ClickSet {
    let mut set = ClickSet::new(format!("{}@{}", window.session_id(), window.initial_index));
    for event in window.iter() {
        set.add_event(event, config, mode);
    }
    set
}

/// Share of the top `k` positions holding a qualifying click, capped at 1.
pub fn precision_at_k(clicks: &ClickSet, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let hits = clicks.clicks.iter().filter(|c| c.rank as usize <= k).count();
    (hits as f64 / k as f64).min(1.0)
}

/// AP over clicked rank positions: with distinct ranks r_1 < ... < r_m in
/// the top `k`, `(sum of i / r_i) / m`, or 0 when `m = 0`.
pub fn average_precision_of_ranks(ranks: impl IntoIterator<Item = u32>, k: usize) -> f64 {
    let ranks: BTreeSet<u32> = ranks.into_iter().filter(|&r| r >= 1 && r as usize <= k).collect();
    if ranks.is_empty() {
        return 0.0;
    }
    let sum: f64 = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| (i + 1) as f64 / r as f64)
        .sum();
    sum / ranks.len() as f64
}

/// AP@k over the rank-bearing clicks of a set.
pub fn average_precision_at_k(clicks: &ClickSet, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    average_precision_of_ranks(clicks.rank_bearing().map(|c| c.rank), k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmSummary {
    pub mean_p_at_k: f64,
    pub map_at_k: f64,
    /// Units with at least one retained search.
    pub units: u64,
    /// Retained searches per candidate unit.
    pub mean_searches: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionReport {
    pub unit_spec: UnitSpec,
    pub k: usize,
    pub with_service: Option<ArmSummary>,
    pub without_service: Option<ArmSummary>,
    pub z_p_at_k: Option<TestResult>,
    pub z_map: Option<TestResult>,
}

#[derive(Debug, Default)]
struct ArmScores {
    candidates: u64,
    searches: u64,
    p: Vec<f64>,
    ap: Vec<f64>,
}

impl ArmScores {
    fn add_unit(&mut self, searches: Vec<ClickSet>, k: usize, min_signals: usize) {
        self.candidates += 1;
        let retained: Vec<ClickSet> = searches
            .into_iter()
            .filter(|s| s.len() >= min_signals)
            .collect();
        if retained.is_empty() {
            return;
        }
        let m = retained.len() as f64;
        self.searches += retained.len() as u64;
        self.p
            .push(retained.iter().map(|s| precision_at_k(s, k)).sum::<f64>() / m);
        self.ap
            .push(retained.iter().map(|s| average_precision_at_k(s, k)).sum::<f64>() / m);
    }

    fn summary(&self) -> Option<ArmSummary> {
        let p = SampleSummary::from_values(&self.p)?;
        let ap = SampleSummary::from_values(&self.ap)?;
        Some(ArmSummary {
            mean_p_at_k: p.mean,
            map_at_k: ap.mean,
            units: p.n,
            mean_searches: self.searches as f64 / self.candidates as f64,
        })
    }
}

fn z_between(with: &[f64], without: &[f64]) -> Option<TestResult> {
    let a = SampleSummary::from_values(with)?;
    let b = SampleSummary::from_values(without)?;
    a.z_test(&b).ok()
}

/// First search scope starting at or after `from`.
fn succeeding_scope(
    events: &[Event],
    from: usize,
    config: &SignalConfig,
    mode: SignalMode,
) -> Vec<ClickSet> {
    let Some(offset) = events[from..].iter().position(|e| config.is_search(&e.action)) else {
        return Vec::new();
    };
    let start = from + offset;
    let end = events[start + 1..]
        .iter()
        .position(|e| config.is_search(&e.action))
        .map_or(events.len(), |p| start + 1 + p);
    let mut scopes = attribute_clicks(&events[start..end], config, mode);
    for s in &mut scopes {
        s.unit_id = format!("{}#{start}", events[start].session_id);
    }
    scopes
}

type Units = Vec<Vec<ClickSet>>;

fn window_units(
    session: &[Event],
    windows: Vec<EventWindow<'_>>,
    config: &SignalConfig,
    spec: &UnitSpec,
) -> Units {
    windows
        .into_iter()
        .map(|w| match spec.unit {
            UnitKind::WindowNoSplit => vec![pool_clicks(&w, config, spec.signal_mode)],
            _ => {
                let span = &session[w.initial_index..w.initial_index + w.event_count()];
                attribute_clicks(span, config, spec.signal_mode)
            }
        })
        .collect()
}

/// Candidate units of one session, split into (with service, without).
fn session_units(events: &[Event], config: &SignalConfig, spec: &UnitSpec) -> (Units, Units) {
    let mode = spec.signal_mode;
    match spec.unit {
        UnitKind::WholeSessionSplit | UnitKind::FilteredProcesses => {
            if events.is_empty() {
                return (Vec::new(), Vec::new());
            }
            let unit = attribute_clicks(events, config, mode);
            if events.iter().any(|e| e.action == config.service_action) {
                (vec![unit], Vec::new())
            } else {
                (Vec::new(), vec![unit])
            }
        }
        UnitKind::SucceedingProcess => {
            let with = events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.action == config.service_action)
                .map(|(i, _)| succeeding_scope(events, i, config, mode))
                .collect();
            let without = baseline_anchors(events, config)
                .map(|i| succeeding_scope(events, i, config, mode))
                .collect();
            (with, without)
        }
        UnitKind::WindowSplit | UnitKind::WindowNoSplit => {
            let n = spec.window_n.expect("validated");
            (
                window_units(events, service_windows(events, config, n), config, spec),
                window_units(events, baseline_windows(events, config, n), config, spec),
            )
        }
    }
}

/// Precision report for both arms of one unit spec.
pub fn unit_report(
    log: &EventLog,
    config: &SignalConfig,
    spec: &UnitSpec,
    k: usize,
) -> Result<PrecisionReport, RelevanceError> {
    spec.validate()?;
    if k == 0 {
        return Err(RelevanceError::InvalidK);
    }
    let per_session: Vec<(Units, Units)> = (0..log.num_sessions())
        .into_par_iter()
        .map(|i| session_units(log.session_at(i).events, config, spec))
        .collect();

    let mut with = ArmScores::default();
    let mut without = ArmScores::default();
    for (w, wo) in per_session {
        for unit in w {
            with.add_unit(unit, k, spec.min_signals);
        }
        for unit in wo {
            without.add_unit(unit, k, spec.min_signals);
        }
    }
    let with_service = with.summary();
    let without_service = without.summary();
    let both = with_service.is_some() && without_service.is_some();
    Ok(PrecisionReport {
        unit_spec: *spec,
        k,
        with_service,
        without_service,
        z_p_at_k: both.then(|| z_between(&with.p, &without.p)).flatten(),
        z_map: both.then(|| z_between(&with.ap, &without.ap)).flatten(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapPoint {
    pub n: usize,
    pub map_with: Option<f64>,
    pub map_without: Option<f64>,
    pub z_map: Option<TestResult>,
}

/// MAP@k of service vs. baseline windows for window sizes `1..=n_max`.
pub fn map_curve(
    log: &EventLog,
    config: &SignalConfig,
    split: bool,
    k: usize,
    n_max: usize,
) -> Result<Vec<MapPoint>, RelevanceError> {
    if n_max < 1 {
        return Err(RelevanceError::InvalidSpec("n_max must be at least 1".into()));
    }
    let unit = if split {
        UnitKind::WindowSplit
    } else {
        UnitKind::WindowNoSplit
    };
    (1..=n_max)
        .map(|n| {
            let spec = UnitSpec::new(unit, SignalMode::ClickThrough).with_window(n);
            let report = unit_report(log, config, &spec, k)?;
            Ok(MapPoint {
                n,
                map_with: report.with_service.map(|a| a.map_at_k),
                map_without: report.without_service.map(|a| a.map_at_k),
                z_map: report.z_map,
            })
        })
        .collect()
}

pub const PRECISION_CSV_HEADER: &str = "unit,signal_mode,k,arm,mean_p_at_k,map_at_k,units,mean_searches,z_p,z_p_pvalue,z_map,z_map_pvalue";

fn fmt6(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_precision_csv<W: Write>(mut out: W, reports: &[PrecisionReport]) -> io::Result<()> {
    writeln!(out, "{PRECISION_CSV_HEADER}")?;
    for r in reports {
        for (arm, summary) in [
            ("with_service", r.with_service),
            ("without_service", r.without_service),
        ] {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.unit_spec.label(),
                r.unit_spec.signal_mode,
                r.k,
                arm,
                fmt6(summary.map(|s| s.mean_p_at_k)),
                fmt6(summary.map(|s| s.map_at_k)),
                summary.map_or(0, |s| s.units),
                fmt6(summary.map(|s| s.mean_searches)),
                fmt6(r.z_p_at_k.map(|t| t.statistic)),
                fmt6(r.z_p_at_k.map(|t| t.p_value)),
                fmt6(r.z_map.map(|t| t.statistic)),
                fmt6(r.z_map.map(|t| t.p_value)),
            )?;
        }
    }
    Ok(())
}
