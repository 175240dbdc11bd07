//! Search processes and event windows inside a single session.
//!
//! Everything here borrows from the session slice; nothing is copied.

use crate::config::SignalConfig;
use crate::event_log::Event;

/// A contiguous run of events opened by a start action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchProcess<'a> {
    /// Position of the first event within the session.
    pub start_index: usize,
    pub events: &'a [Event],
}

impl<'a> SearchProcess<'a> {
    pub fn session_id(&self) -> &'a str {
        &self.events[0].session_id
    }

    pub fn contains_action(&self, action: &str) -> bool {
        self.events.iter().any(|e| e.action == action)
    }

    pub fn count_action(&self, action: &str) -> usize {
        self.events.iter().filter(|e| e.action == action).count()
    }
}

/// An initiating event and up to `n_requested` events that follow it in the
/// same session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventWindow<'a> {
    /// Position of the initiating event within the session.
    pub initial_index: usize,
    pub initial: &'a Event,
    pub followers: &'a [Event],
    pub n_requested: usize,
    /// The session ended before `n_requested` followers existed.
    pub truncated: bool,
}

impl<'a> EventWindow<'a> {
    fn at(session: &'a [Event], index: usize, n: usize) -> Self {
        let end = session.len().min(index + 1 + n);
        let followers = &session[index + 1..end];
        EventWindow {
            initial_index: index,
            initial: &session[index],
            followers,
            n_requested: n,
            truncated: followers.len() < n,
        }
    }

    pub fn session_id(&self) -> &'a str {
        &self.initial.session_id
    }

    /// Initial event followed by its followers.
    pub fn iter(&self) -> impl Iterator<Item = &'a Event> + 'a {
        std::iter::once(self.initial).chain(self.followers.iter())
    }

    /// Number of events including the initial one.
    pub fn event_count(&self) -> usize {
        1 + self.followers.len()
    }
}

/// Splits a session into search processes.
///
/// A process starts at a start action and ends at whichever comes first: the
/// first terminal action (inclusive), the event before the next start action,
/// or the end of the session. Events before the first start action, and
/// between a terminal action and the next start action, belong to no process.
pub fn split_processes<'a>(session: &'a [Event], config: &SignalConfig) -> Vec<SearchProcess<'a>> {
    let mut processes = Vec::new();
    let mut open: Option<usize> = None;
    for (i, event) in session.iter().enumerate() {
        if config.is_start(&event.action) {
            if let Some(start) = open {
                processes.push(SearchProcess {
                    start_index: start,
                    events: &session[start..i],
                });
            }
            open = Some(i);
        } else if config.is_terminal(&event.action) {
            if let Some(start) = open.take() {
                processes.push(SearchProcess {
                    start_index: start,
                    events: &session[start..=i],
                });
            }
        }
    }
    if let Some(start) = open {
        processes.push(SearchProcess {
            start_index: start,
            events: &session[start..],
        });
    }
    processes
}

/// One window per occurrence of `initial_action`; windows may overlap and
/// stop at the session end.
pub fn extract_windows<'a>(
    session: &'a [Event],
    initial_action: &str,
    n: usize,
) -> Vec<EventWindow<'a>> {
    session
        .iter()
        .enumerate()
        .filter(|(_, e)| e.action == initial_action)
        .map(|(i, _)| EventWindow::at(session, i, n))
        .collect()
}

/// Windows anchored at explicit service usage.
pub fn service_windows<'a>(
    session: &'a [Event],
    config: &SignalConfig,
    n: usize,
) -> Vec<EventWindow<'a>> {
    extract_windows(session, &config.service_action, n)
}

/// Positions of service-eligible searches not immediately preceded by the
/// service action.
pub fn baseline_anchors<'a>(
    session: &'a [Event],
    config: &'a SignalConfig,
) -> impl Iterator<Item = usize> + 'a {
    session.iter().enumerate().filter_map(move |(i, e)| {
        let eligible = e.action == config.service_search_action;
        let after_service = i > 0 && session[i - 1].action == config.service_action;
        (eligible && !after_service).then_some(i)
    })
}

/// Comparison-arm windows: a service-eligible search where the service was
/// available but not used just before it.
pub fn baseline_windows<'a>(
    session: &'a [Event],
    config: &SignalConfig,
    n: usize,
) -> Vec<EventWindow<'a>> {
    baseline_anchors(session, config)
        .map(|i| EventWindow::at(session, i, n))
        .collect()
}
