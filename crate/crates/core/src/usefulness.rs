//! Local and global usefulness of a search service.
//!
//! Local usefulness is the share of search processes in which the service
//! was used. Global usefulness is the share of service usages followed by at
//! least one positive signal within the next `n` events. The same ratio for
//! baseline searches gives the comparison arm. The comparison reports
//! co-occurrence only, not a causal effect.

use std::collections::BTreeSet;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::SignalConfig;
use crate::event_log::{Event, EventLog};
use crate::sessionize::{baseline_anchors, service_windows, split_processes, EventWindow, SearchProcess};
use crate::stats::{chi_squared_2x2, StatsError, TestMethod, TestResult};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("configuration error: {0}")]
    Config(String),
}

/// A success count out of a total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub total: u64,
}

impl Proportion {
    /// `None` when there is nothing to divide by.
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.successes as f64 / self.total as f64)
    }

    pub fn failures(&self) -> u64 {
        self.total - self.successes
    }
}

/// 1 if any follower is a success event. The initiating event never counts.
pub fn success_indicator(window: &EventWindow<'_>, success_set: &BTreeSet<String>) -> bool {
    window
        .followers
        .iter()
        .any(|e| success_set.contains(e.action.as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalUsefulness {
    pub processes_with_usage: u64,
    pub total_processes: u64,
    /// Every service event inside a process, duplicates included.
    pub usage_events: u64,
}

impl LocalUsefulness {
    /// Share of processes with at least one usage; always in [0, 1].
    pub fn local(&self) -> f64 {
        self.processes_with_usage as f64 / self.total_processes as f64
    }

    /// Usage events per process; may exceed 1.
    pub fn raw_usage_ratio(&self) -> f64 {
        self.usage_events as f64 / self.total_processes as f64
    }

    fn merge(self, other: Self) -> Self {
        LocalUsefulness {
            processes_with_usage: self.processes_with_usage + other.processes_with_usage,
            total_processes: self.total_processes + other.total_processes,
            usage_events: self.usage_events + other.usage_events,
        }
    }

    const ZERO: LocalUsefulness = LocalUsefulness {
        processes_with_usage: 0,
        total_processes: 0,
        usage_events: 0,
    };
}

pub fn local_usefulness(
    processes: &[SearchProcess<'_>],
    config: &SignalConfig,
) -> Result<LocalUsefulness, MetricError> {
    if processes.is_empty() {
        return Err(MetricError::Undefined("no search processes"));
    }
    let mut counts = LocalUsefulness::ZERO;
    for p in processes {
        let uses = p.count_action(&config.service_action) as u64;
        counts.total_processes += 1;
        counts.usage_events += uses;
        counts.processes_with_usage += u64::from(uses > 0);
    }
    Ok(counts)
}

/// Local usefulness over every search process in the log.
pub fn local_usefulness_of_log(
    log: &EventLog,
    config: &SignalConfig,
) -> Result<LocalUsefulness, MetricError> {
    let counts = (0..log.num_sessions())
        .into_par_iter()
        .map(|i| {
            let processes = split_processes(log.session_at(i).events, config);
            if processes.is_empty() {
                LocalUsefulness::ZERO
            } else {
                local_usefulness(&processes, config).expect("non-empty")
            }
        })
        .reduce(|| LocalUsefulness::ZERO, LocalUsefulness::merge);
    if counts.total_processes == 0 {
        return Err(MetricError::Undefined("no search processes"));
    }
    Ok(counts)
}

pub fn global_usefulness(
    windows: &[EventWindow<'_>],
    success_set: &BTreeSet<String>,
) -> Result<Proportion, MetricError> {
    if windows.is_empty() {
        return Err(MetricError::Undefined("no windows"));
    }
    let successes = windows
        .iter()
        .filter(|w| success_indicator(w, success_set))
        .count() as u64;
    Ok(Proportion {
        successes,
        total: windows.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurveOptions {
    pub n_max: usize,
    /// Drop windows cut short by the end of their session.
    pub exclude_truncated: bool,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            n_max: 17,
            exclude_truncated: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    pub with_service: Proportion,
    pub without_service: Proportion,
    /// Absent when an arm has no windows at this `n`.
    pub test: Option<TestResult>,
}

/// How far a window anchor reaches, independent of `n`.
#[derive(Debug, Clone, Copy)]
struct AnchorProfile {
    /// 1-based follower position of the first success, if any.
    first_success: Option<usize>,
    /// Followers before the session ends.
    available: usize,
}

fn profile(session: &[Event], anchor: usize, success_set: &BTreeSet<String>) -> AnchorProfile {
    let rest = &session[anchor + 1..];
    AnchorProfile {
        first_success: rest
            .iter()
            .position(|e| success_set.contains(e.action.as_str()))
            .map(|p| p + 1),
        available: rest.len(),
    }
}

fn arm_proportion(profiles: &[AnchorProfile], n: usize, exclude_truncated: bool) -> Proportion {
    let mut out = Proportion::default();
    for p in profiles {
        if exclude_truncated && p.available < n {
            continue;
        }
        out.total += 1;
        out.successes += u64::from(p.first_success.is_some_and(|s| s <= n));
    }
    out
}

/// Chi-squared comparison of two arms. When no window (or every window) in
/// either arm succeeded, both proportions are equal and the statistic is 0.
pub fn compare_arms(with: Proportion, without: Proportion) -> Option<TestResult> {
    if with.total == 0 || without.total == 0 {
        return None;
    }
    match chi_squared_2x2(
        with.successes,
        with.failures(),
        without.successes,
        without.failures(),
    ) {
        Ok(test) => Some(test),
        Err(StatsError::DegenerateTable) => Some(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            df: Some(1),
            method: TestMethod::ChiSquared2x2,
        }),
        Err(_) => None,
    }
}

fn collect_profiles(
    log: &EventLog,
    config: &SignalConfig,
    success_set: &BTreeSet<String>,
) -> (Vec<AnchorProfile>, Vec<AnchorProfile>) {
    let per_session: Vec<(Vec<AnchorProfile>, Vec<AnchorProfile>)> = (0..log.num_sessions())
        .into_par_iter()
        .map(|i| {
            let events = log.session_at(i).events;
            let with = events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.action == config.service_action)
                .map(|(i, _)| profile(events, i, success_set))
                .collect();
            let without = baseline_anchors(events, config)
                .map(|i| profile(events, i, success_set))
                .collect();
            (with, without)
        })
        .collect();
    let mut with = Vec::new();
    let mut without = Vec::new();
    for (w, wo) in per_session {
        with.extend(w);
        without.extend(wo);
    }
    (with, without)
}

/// Curve points for `n = 0..=n_max`, with absent ratios where an arm is empty.
pub fn curve_points(log: &EventLog, config: &SignalConfig, options: CurveOptions) -> Vec<CurvePoint> {
    let (with, without) = collect_profiles(log, config, &config.success_actions);
    (0..=options.n_max)
        .map(|n| {
            let with_service = arm_proportion(&with, n, options.exclude_truncated);
            let without_service = arm_proportion(&without, n, options.exclude_truncated);
            CurvePoint {
                n,
                with_service,
                without_service,
                test: compare_arms(with_service, without_service),
            }
        })
        .collect()
}

/// Like [`curve_points`], but fails when either arm is empty at every `n`.
pub fn usefulness_curve(
    log: &EventLog,
    config: &SignalConfig,
    options: CurveOptions,
) -> Result<Vec<CurvePoint>, MetricError> {
    if options.n_max < 1 {
        return Err(MetricError::Config("n_max must be at least 1".into()));
    }
    let points = curve_points(log, config, options);
    if points.iter().all(|p| p.with_service.total == 0) {
        return Err(MetricError::Undefined("no service windows"));
    }
    if points.iter().all(|p| p.without_service.total == 0) {
        return Err(MetricError::Undefined("no baseline windows"));
    }
    Ok(points)
}

/// All service windows of size `n` across the log.
pub fn log_service_windows<'a>(
    log: &'a EventLog,
    config: &SignalConfig,
    n: usize,
) -> Vec<EventWindow<'a>> {
    log.sessions()
        .flat_map(|s| service_windows(s.events, config, n))
        .collect()
}

/// Global usefulness on positive signals minus the same ratio on negative
/// signals, over the service windows. Lies in [-1, 1].
pub fn negative_adjusted_usefulness(
    log: &EventLog,
    config: &SignalConfig,
    negative_set: &BTreeSet<String>,
    n: usize,
) -> Result<f64, MetricError> {
    if let Some(both) = negative_set.intersection(&config.success_actions).next() {
        return Err(MetricError::Config(format!(
            "{both:?} is both a positive and a negative signal"
        )));
    }
    let windows = log_service_windows(log, config, n);
    let positive = global_usefulness(&windows, &config.success_actions)?;
    let negative = global_usefulness(&windows, negative_set)?;
    Ok(positive.ratio().unwrap_or(0.0) - negative.ratio().unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsefulnessReport {
    pub local: Option<LocalUsefulness>,
    pub curve: Vec<CurvePoint>,
    /// `(n, adjusted ratio)` for every curve `n`; absent without service windows.
    pub negative_adjusted: Option<Vec<(usize, Option<f64>)>>,
}

pub fn usefulness_report(
    log: &EventLog,
    config: &SignalConfig,
    options: CurveOptions,
    negative_set: Option<&BTreeSet<String>>,
) -> Result<UsefulnessReport, MetricError> {
    let local = local_usefulness_of_log(log, config).ok();
    let curve = curve_points(log, config, options);
    let negative_adjusted = match negative_set {
        None => None,
        Some(set) => {
            let mut values = Vec::with_capacity(curve.len());
            for n in 0..=options.n_max {
                match negative_adjusted_usefulness(log, config, set, n) {
                    Ok(v) => values.push((n, Some(v))),
                    Err(MetricError::Undefined(_)) => values.push((n, None)),
                    Err(e) => return Err(e),
                }
            }
            Some(values)
        }
    };
    Ok(UsefulnessReport {
        local,
        curve,
        negative_adjusted,
    })
}

pub const CURVE_CSV_HEADER: &str =
    "n,with_success,with_total,with_ratio,without_success,without_total,without_ratio,chi2,p_value";

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_curve_csv<W: Write>(mut out: W, points: &[CurvePoint]) -> io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.n,
            p.with_service.successes,
            p.with_service.total,
            fmt_opt(p.with_service.ratio()),
            p.without_service.successes,
            p.without_service.total,
            fmt_opt(p.without_service.ratio()),
            fmt_opt(p.test.map(|t| t.statistic)),
            fmt_opt(p.test.map(|t| t.p_value)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sessionize::{baseline_windows, extract_windows};
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn session(sid: &str, actions: &[&str]) -> Vec<Event> {
        actions
            .iter()
            .enumerate()
            .map(|(i, a)| Event::new(sid, i as u64, *a))
            .collect()
    }

    fn config() -> SignalConfig {
        SignalConfig::digital_library()
    }

    #[test]
    fn empty_followers_never_succeed() {
        let s = session("s", &["CTS_select", "export_bib"]);
        let w = extract_windows(&s, "CTS_select", 0);
        assert!(!success_indicator(&w[0], &set(&["export_bib"])));
        let w = extract_windows(&s, "export_bib", 3);
        assert!(!success_indicator(&w[0], &set(&["export_bib"])));
    }

    #[test]
    fn local_zero_and_dedup() {
        let cfg = config();
        let s = session("s", &["enter_search_term", "CTS_search", "enter_search_term"]);
        let p = split_processes(&s, &cfg);
        assert_eq!(local_usefulness(&p, &cfg).unwrap().local(), 0.0);

        let s = session("s", &["enter_search_term", "CTS_select", "CTS_search", "CTS_select"]);
        let p = split_processes(&s, &cfg);
        let l = local_usefulness(&p, &cfg).unwrap();
        assert_eq!(l.local(), 1.0);
        assert_eq!(l.raw_usage_ratio(), 2.0);

        assert!(matches!(local_usefulness(&[], &cfg), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn global_errors_and_vacuous() {
        assert!(global_usefulness(&[], &set(&["x"])).is_err());
        let s = session("s", &["CTS_select"]);
        let w = extract_windows(&s, "CTS_select", 5);
        let g = global_usefulness(&w, &set(&["export_bib"])).unwrap();
        assert_eq!(g.ratio(), Some(0.0));
    }

    #[test]
    fn negative_set_cases() {
        let cfg = config();
        let log = EventLog::from_events(session(
            "s",
            &["enter_search_term", "CTS_select", "CTS_search", "export_bib", "logout"],
        ));
        let plain = global_usefulness(&log_service_windows(&log, &cfg, 4), &cfg.success_actions)
            .unwrap()
            .ratio()
            .unwrap();
        let adjusted = negative_adjusted_usefulness(&log, &cfg, &BTreeSet::new(), 4).unwrap();
        assert_eq!(adjusted, plain);
        let cancelled = negative_adjusted_usefulness(&log, &cfg, &set(&["logout"]), 4).unwrap();
        assert_eq!(cancelled, 0.0);
        assert!(matches!(
            negative_adjusted_usefulness(&log, &cfg, &set(&["export_bib"]), 4),
            Err(MetricError::Config(_))
        ));
    }

    #[test]
    fn identical_arms_give_null_test() {
        let cfg = config();
        let mut events = Vec::new();
        for i in 0..20 {
            let sid = format!("s{i}");
            // Both arms reach the success two events after their anchor.
            let a: &[&str] = if i % 2 == 0 {
                &["enter_search_term", "CTS_select", "CTS_search", "export_bib"]
            } else {
                &["enter_search_term", "CTS_search", "view_record", "export_bib"]
            };
            events.extend(session(&sid, a));
        }
        let log = EventLog::from_events(events);
        let points = usefulness_curve(&log, &cfg, CurveOptions { n_max: 6, exclude_truncated: false })
            .unwrap();
        for p in &points {
            assert_eq!(p.with_service, p.without_service);
            let t = p.test.unwrap();
            assert_eq!(t.statistic, 0.0);
            assert_eq!(t.p_value, 1.0);
        }
    }

    #[test]
    fn curve_requires_both_arms() {
        let cfg = config();
        let log = EventLog::from_events(session("s", &["enter_search_term", "CTS_search"]));
        assert!(matches!(
            usefulness_curve(&log, &cfg, CurveOptions::default()),
            Err(MetricError::Undefined(_))
        ));
        let points = curve_points(&log, &cfg, CurveOptions::default());
        assert_eq!(points.len(), 18);
        assert!(points.iter().all(|p| p.with_service.ratio().is_none() && p.test.is_none()));
    }

    #[test]
    fn exclude_truncated_drops_short_windows() {
        let cfg = config();
        let log = EventLog::from_events(
            [
                session("a", &["CTS_select", "CTS_search", "export_bib"]),
                session("b", &["CTS_select", "CTS_search", "view_record", "view_record", "x"]),
                session("c", &["CTS_search", "view_record", "view_record", "view_record"]),
            ]
            .concat(),
        );
        let opts = CurveOptions {
            n_max: 4,
            exclude_truncated: true,
        };
        let points = curve_points(&log, &cfg, opts);
        assert_eq!(points[2].with_service, Proportion { successes: 1, total: 2 });
        assert_eq!(points[3].with_service, Proportion { successes: 0, total: 1 });
        let kept = curve_points(&log, &cfg, CurveOptions { exclude_truncated: false, ..opts });
        assert_eq!(kept[3].with_service, Proportion { successes: 1, total: 2 });
    }

    #[test]
    fn csv_formatting() {
        let point = CurvePoint {
            n: 5,
            with_service: Proportion { successes: 2, total: 3 },
            without_service: Proportion { successes: 0, total: 0 },
            test: None,
        };
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &[point]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{CURVE_CSV_HEADER}\n5,2,3,0.666667,0,0,,,\n"));
    }

    fn arb_log() -> impl Strategy<Value = EventLog> {
        prop::collection::vec(
            (
                0usize..4,
                prop::sample::select(vec![
                    "enter_search_term",
                    "CTS_select",
                    "CTS_search",
                    "search",
                    "view_record",
                    "export_bib",
                    "to_favorites",
                    "logout",
                ]),
            ),
            0..80,
        )
        .prop_map(|items| {
            EventLog::from_events(
                items
                    .into_iter()
                    .enumerate()
                    .map(|(i, (s, a))| Event::new(format!("s{s}"), i as u64, a))
                    .collect(),
            )
        })
    }

    proptest! {
        #[test]
        fn curve_agrees_with_window_extraction(log in arb_log(), n in 0usize..12) {
            let cfg = config();
            let points = curve_points(&log, &cfg, CurveOptions { n_max: 12, exclude_truncated: false });
            let service: Vec<EventWindow> = log.sessions()
                .flat_map(|s| service_windows(s.events, &cfg, n)).collect();
            let baseline: Vec<EventWindow> = log.sessions()
                .flat_map(|s| baseline_windows(s.events, &cfg, n)).collect();
            let p = points[n];
            prop_assert_eq!(p.with_service.total, service.len() as u64);
            prop_assert_eq!(p.without_service.total, baseline.len() as u64);
            if !service.is_empty() {
                prop_assert_eq!(p.with_service, global_usefulness(&service, &cfg.success_actions).unwrap());
            }
            if !baseline.is_empty() {
                prop_assert_eq!(p.without_service, global_usefulness(&baseline, &cfg.success_actions).unwrap());
            }
        }

        #[test]
        fn ratios_in_range(log in arb_log()) {
            let cfg = config();
            if let Ok(local) = local_usefulness_of_log(&log, &cfg) {
                prop_assert!((0.0..=1.0).contains(&local.local()));
                prop_assert!(local.local() <= local.raw_usage_ratio());
            }
            for n in [0, 3, 7] {
                if let Ok(v) = negative_adjusted_usefulness(&log, &cfg, &set(&["logout"]), n) {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
            for p in curve_points(&log, &cfg, CurveOptions { n_max: 10, exclude_truncated: true }) {
                for r in [p.with_service.ratio(), p.without_service.ratio()].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&r));
                }
                if let Some(t) = p.test {
                    prop_assert!(t.statistic >= 0.0 && (0.0..=1.0).contains(&t.p_value));
                }
            }
        }
    }
}
