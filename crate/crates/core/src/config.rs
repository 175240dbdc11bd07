//! Action-label vocabularies that drive every analysis.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid signal configuration: {0}")]
    Invalid(String),
}

/// Which action labels play which role in a log.
///
/// Set-valued roles are kept sorted so that serialized configs and any
/// output derived from them are deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    /// Actions that open a search process.
    pub start_actions: BTreeSet<String>,
    /// Actions that close the active part of a session.
    pub terminal_actions: BTreeSet<String>,
    /// Explicit use of the service under evaluation.
    pub service_action: String,
    /// A search submitted from a form where the service was offered.
    pub service_search_action: String,
    pub generic_search_actions: BTreeSet<String>,
    /// Positive signals of search success.
    pub success_actions: BTreeSet<String>,
    /// Signals tied to a ranked document on a result page.
    pub click_actions: BTreeSet<String>,
    /// The click used for rank-sensitive precision.
    pub view_action: String,
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl SignalConfig {
    /// Vocabulary of a scholarly digital library with a term-suggestion
    /// service (`CTS_select`) in front of the search form.
    pub fn digital_library() -> Self {
        SignalConfig {
            start_actions: set(&["enter_search_term"]),
            terminal_actions: set(&["logout"]),
            service_action: "CTS_select".into(),
            service_search_action: "CTS_search".into(),
            generic_search_actions: set(&["search", "CTS_search"]),
            success_actions: set(&[
                "goto_fulltext",
                "goto_google_scholar",
                "goto_google_books",
                "goto_local_availability",
                "view_description",
                "view_citation",
                "view_references",
                "export_cite",
                "export_bib",
                "export_mail",
                "save_to_multiple_favorites",
                "to_favorites",
                "export_search_mail",
                "save_search",
                "save_search_history",
            ]),
            click_actions: set(&[
                "view_record",
                "goto_fulltext",
                "goto_google_scholar",
                "goto_google_books",
                "to_favorites",
            ]),
            view_action: "view_record".into(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let config: SignalConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.start_actions.is_empty() {
            return Err(ConfigError::Invalid("start_actions is empty".into()));
        }
        if self.service_action.is_empty() || self.service_search_action.is_empty() {
            return Err(ConfigError::Invalid(
                "service_action and service_search_action must be non-empty".into(),
            ));
        }
        if self.generic_search_actions.contains(&self.service_action) {
            return Err(ConfigError::Invalid(format!(
                "service_action {:?} must not be a generic search action",
                self.service_action
            )));
        }
        if !self
            .generic_search_actions
            .contains(&self.service_search_action)
        {
            return Err(ConfigError::Invalid(format!(
                "service_search_action {:?} must be listed in generic_search_actions",
                self.service_search_action
            )));
        }
        if let Some(both) = self.success_actions.intersection(&self.start_actions).next() {
            return Err(ConfigError::Invalid(format!(
                "{both:?} is both a start action and a success action"
            )));
        }
        if !self.click_actions.contains(&self.view_action) {
            return Err(ConfigError::Invalid(format!(
                "view_action {:?} must be listed in click_actions",
                self.view_action
            )));
        }
        Ok(())
    }

    pub fn is_start(&self, action: &str) -> bool {
        self.start_actions.contains(action)
    }

    pub fn is_terminal(&self, action: &str) -> bool {
        self.terminal_actions.contains(action)
    }

    pub fn is_search(&self, action: &str) -> bool {
        self.generic_search_actions.contains(action)
    }

    pub fn is_success(&self, action: &str) -> bool {
        self.success_actions.contains(action)
    }

    /// True if the label appears in any configured role.
    pub fn knows(&self, action: &str) -> bool {
        self.is_start(action)
            || self.is_terminal(action)
            || self.is_search(action)
            || self.is_success(action)
            || self.click_actions.contains(action)
            || action == self.service_action
            || action == self.service_search_action
            || action == self.view_action
    }
}
