//! Synthetic session logs with known ground truth.
//!
//! Every session draws from its own ChaCha stream (`seed`, stream = session
//! index), so output does not depend on how sessions are scheduled.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SignalConfig;
use crate::event_log::{Event, EventLog};

/// First timestamp of every session; events are 1 s apart.
pub const BASE_TIMESTAMP_MS: u64 = 1_400_000_000_000;
pub const STEP_MS: u64 = 1_000;
pub const MAX_RANK: usize = 20;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator parameters: {0}")]
    Invalid(String),
    #[error("cannot parse generator parameters: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub sessions: usize,
    pub seed: u64,
    /// Mean of the geometric number of processes per session (at least 1).
    pub processes_per_session: f64,
    /// Chance that a process uses the service.
    pub service_usage_prob: f64,
    /// Chance of a success signal in a process without the service.
    pub base_success_prob: f64,
    /// Added success chance for processes using the service.
    pub service_lift: f64,
    /// Inclusive range of result views before the success signal.
    pub views_before_signal: [usize; 2],
    /// Weights over ranks 1..=len for viewed records.
    pub click_rank_weights: Vec<f64>,
    /// Rank weights used inside service processes, if different.
    pub service_click_rank_weights: Option<Vec<f64>>,
    /// Chance that a session ends with an explicit logout.
    pub logout_prob: f64,
    pub success_action: String,
    /// Window sizes for which expectations are reported alongside a log.
    pub expected_n: Vec<usize>,
}

/// Zipf-like weights `1/r` over the first result page.
pub fn zipf_weights() -> Vec<f64> {
    (1..=MAX_RANK).map(|r| 1.0 / r as f64).collect()
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            sessions: 1_000,
            seed: 0,
            processes_per_session: 2.0,
            service_usage_prob: 0.3,
            base_success_prob: 0.10,
            service_lift: 0.15,
            views_before_signal: [3, 5],
            click_rank_weights: zipf_weights(),
            service_click_rank_weights: None,
            logout_prob: 0.5,
            success_action: "export_bib".into(),
            expected_n: vec![7],
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<(), GenError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(GenError::Invalid(format!("{name} = {p} is outside [0, 1]")))
    }
}

fn check_weights(name: &str, w: &[f64]) -> Result<(), GenError> {
    if w.is_empty() || w.len() > MAX_RANK {
        return Err(GenError::Invalid(format!("{name} needs 1..={MAX_RANK} weights")));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
        return Err(GenError::Invalid(format!("{name} must be non-negative with a positive sum")));
    }
    Ok(())
}

impl GenParams {
    pub fn from_json_str(text: &str) -> Result<Self, GenError> {
        let params: GenParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.processes_per_session.is_finite() && self.processes_per_session >= 1.0) {
            return Err(GenError::Invalid(format!(
                "processes_per_session = {} must be at least 1",
                self.processes_per_session
            )));
        }
        check_prob("service_usage_prob", self.service_usage_prob)?;
        check_prob("base_success_prob", self.base_success_prob)?;
        check_prob("base_success_prob + service_lift", self.service_success_prob())?;
        check_prob("logout_prob", self.logout_prob)?;
        let [lo, hi] = self.views_before_signal;
        if lo > hi {
            return Err(GenError::Invalid(format!("views_before_signal [{lo}, {hi}] is empty")));
        }
        check_weights("click_rank_weights", &self.click_rank_weights)?;
        if let Some(w) = &self.service_click_rank_weights {
            check_weights("service_click_rank_weights", w)?;
        }
        if !self.signal_config().is_success(&self.success_action) {
            return Err(GenError::Invalid(format!(
                "success_action {:?} is not a success action",
                self.success_action
            )));
        }
        Ok(())
    }

    pub fn service_success_prob(&self) -> f64 {
        self.base_success_prob + self.service_lift
    }

    /// Chance that another process follows the current one.
    pub fn continue_prob(&self) -> f64 {
        1.0 - 1.0 / self.processes_per_session
    }

    /// Vocabulary of the generated logs.
    pub fn signal_config(&self) -> SignalConfig {
        SignalConfig::digital_library()
    }

    /// Smallest window that always reaches a service process's own success.
    pub fn full_depth_n(&self) -> usize {
        self.views_before_signal[1] + 2
    }
}

struct SessionGen<'a> {
    params: &'a GenParams,
    ranks: &'a WeightedIndex<f64>,
    service_ranks: &'a WeightedIndex<f64>,
}

impl SessionGen<'_> {
    fn session(&self, index: usize) -> Vec<Event> {
        let p = self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(index as u64);
        let sid = format!("s{index:07}");
        let mut events = Vec::new();
        let mut push = |action: &str, record: Option<(String, u32)>| {
            let ts = BASE_TIMESTAMP_MS + STEP_MS * events.len() as u64;
            let mut e = Event::new(sid.as_str(), ts, action);
            if let Some((rid, rank)) = record {
                e = e.with_record(rid, Some(rank));
            }
            events.push(e);
        };

        let [lo, hi] = p.views_before_signal;
        let mut process = 0usize;
        loop {
            let service = rng.random_bool(p.service_usage_prob);
            push("enter_search_term", None);
            if service {
                push("CTS_select", None);
            }
            push("CTS_search", None);
            let dist = if service { self.service_ranks } else { self.ranks };
            let views = rng.random_range(lo..=hi);
            let mut last = None;
            for _ in 0..views {
                let rank = dist.sample(&mut rng) as u32 + 1;
                let record = (format!("{sid}-p{process}-r{rank}"), rank);
                last = Some(record.clone());
                push("view_record", Some(record));
            }
            let success = if service {
                p.service_success_prob()
            } else {
                p.base_success_prob
            };
            if rng.random_bool(success) {
                push(&p.success_action, last);
            }
            process += 1;
            if !rng.random_bool(p.continue_prob()) {
                break;
            }
        }
        if rng.random_bool(p.logout_prob) {
            push("logout", None);
        }
        events
    }
}

/// Generates `params.sessions` sessions in parallel; output is ordered by
/// session index and identical for a fixed seed.
pub fn generate(params: &GenParams) -> Result<EventLog, GenError> {
    params.validate()?;
    let ranks = WeightedIndex::new(&params.click_rank_weights)
        .map_err(|e| GenError::Invalid(e.to_string()))?;
    let service_ranks = match &params.service_click_rank_weights {
        Some(w) => WeightedIndex::new(w).map_err(|e| GenError::Invalid(e.to_string()))?,
        None => ranks.clone(),
    };
    let gen = SessionGen {
        params,
        ranks: &ranks,
        service_ranks: &service_ranks,
    };
    let sessions: Vec<Vec<Event>> = (0..params.sessions)
        .into_par_iter()
        .map(|i| gen.session(i))
        .collect();
    Ok(EventLog::from_events(sessions.into_iter().flatten().collect()))
}

/// Exact expectations of the generative model for one window size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedMetrics {
    pub n: usize,
    pub local: f64,
    pub global_with: f64,
    pub global_without: f64,
    /// Chance that a service window reaches its own process's success slot.
    pub coverage_with: f64,
    /// Same for baseline windows.
    pub coverage_without: f64,
    /// Part of `global_with` from successes in later processes.
    pub spillover_with: f64,
    pub spillover_without: f64,
}

/// Expected local and global usefulness at window size `n`.
///
/// Windows shorter than [`GenParams::full_depth_n`] miss some successes
/// (see the coverage factors); longer windows can also reach successes of
/// following processes, which a dynamic program over offsets accounts for.
pub fn expected_metrics(params: &GenParams, n: usize) -> ExpectedMetrics {
    let [lo, hi] = params.views_before_signal;
    let p_views = 1.0 / (hi - lo + 1) as f64;
    let q = params.service_usage_prob;
    let b = params.base_success_prob;
    let s = params.service_success_prob();
    let c = params.continue_prob();

    // tail[t]: chance of a success at offset <= n when a new process may
    // start at offset t.
    let mut tail = vec![0.0; n + 2];
    let at = |tail: &[f64], t: usize| if t <= n { tail[t] } else { 0.0 };
    for t in (1..=n).rev() {
        let mut acc = 0.0;
        for v in lo..=hi {
            // Service process: enter, select, search, v views, success.
            let hit = f64::from(u8::from(t + 3 + v <= n));
            let with = s * hit + (1.0 - s) * at(&tail, t + 3 + v);
            // Plain process: enter, search, v views, success.
            let hit = f64::from(u8::from(t + 2 + v <= n));
            let without = b * hit + (1.0 - b) * at(&tail, t + 2 + v);
            acc += p_views * (q * with + (1.0 - q) * without);
        }
        tail[t] = c * acc;
    }

    let mut m = ExpectedMetrics {
        n,
        local: q,
        global_with: 0.0,
        global_without: 0.0,
        coverage_with: 0.0,
        coverage_without: 0.0,
        spillover_with: 0.0,
        spillover_without: 0.0,
    };
    for v in lo..=hi {
        // The service anchor is followed by the search and v views.
        let cov = f64::from(u8::from(v + 2 <= n));
        m.coverage_with += p_views * cov;
        m.spillover_with += p_views * (1.0 - s) * at(&tail, v + 2);
        let cov = f64::from(u8::from(v < n));
        m.coverage_without += p_views * cov;
        m.spillover_without += p_views * (1.0 - b) * at(&tail, v + 1);
    }
    m.global_with = s * m.coverage_with + m.spillover_with;
    m.global_without = b * m.coverage_without + m.spillover_without;
    m
}
