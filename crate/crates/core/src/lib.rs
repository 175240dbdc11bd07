//! Log analytics for judging whether an interactive search service helps.
//!
//! Start with [`event_log::load_log`], group events with [`sessionize`], then
//! score the service with [`usefulness`] and [`relevance`].

pub mod cli;
pub mod config;
pub mod event_log;
pub mod patterns;
pub mod relevance;
pub mod sessionize;
pub mod stats;
pub mod synthgen;
pub mod usefulness;

pub use config::SignalConfig;
pub use event_log::{Event, EventLog};
