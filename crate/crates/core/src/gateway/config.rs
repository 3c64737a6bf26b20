//! Service configuration, read from a TOML file with flat keys.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::assistant::prompts::PromptSet;
use crate::assistant::{Assistant, RemoteProvider, ScriptedProvider};
use crate::index::{Embedder, HashedEmbedder, IndexConfig, RemoteEmbedder};
use crate::workflow::WorkflowConfig;

pub const CONFIG_ENV: &str = "CHOIR_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hashed,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssistantKind {
    #[default]
    Scripted,
    Remote,
}

fn d_repo_root() -> PathBuf {
    PathBuf::from("./knowledge")
}
fn d_selection_window() -> usize {
    crate::workflow::DEFAULT_SELECTION_WINDOW
}
fn d_answer_top_k() -> usize {
    crate::workflow::DEFAULT_ANSWER_TOP_K
}
fn d_threshold() -> f64 {
    crate::index::DEFAULT_RELEVANCE_THRESHOLD
}
fn d_max_chunk() -> usize {
    crate::index::segment::DEFAULT_MAX_CHUNK_CHARS
}
fn d_ttl() -> u64 {
    crate::workflow::DEFAULT_FLOW_TTL_HOURS
}
fn d_listen() -> String {
    "127.0.0.1:8080".into()
}
fn d_journal() -> PathBuf {
    PathBuf::from("./choir-journal.ndjson")
}
fn d_dimension() -> usize {
    256
}
fn d_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "d_repo_root")]
    pub repo_root: PathBuf,
    /// Create the repository when `repo_root` does not hold one.
    #[serde(default)]
    pub repo_init: bool,
    #[serde(default)]
    pub managers: Vec<String>,
    #[serde(default = "d_selection_window")]
    pub selection_window: usize,
    #[serde(default = "d_answer_top_k")]
    pub answer_top_k: usize,
    #[serde(default = "d_threshold")]
    pub relevance_threshold: f64,
    #[serde(default = "d_max_chunk")]
    pub max_chunk_chars: usize,
    #[serde(default = "d_ttl")]
    pub flow_ttl_hours: u64,
    #[serde(default = "d_listen")]
    pub listen_addr: String,
    #[serde(default = "d_journal")]
    pub journal_path: PathBuf,
    /// When set, events from other workspaces are refused.
    #[serde(default)]
    pub workspace_id: Option<String>,

    #[serde(default)]
    pub embedder: EmbedderKind,
    #[serde(default, rename = "embedder.endpoint")]
    pub embedder_endpoint: Option<String>,
    #[serde(default = "d_dimension", rename = "embedder.dimension")]
    pub embedder_dimension: usize,

    #[serde(default)]
    pub assistant: AssistantKind,
    #[serde(default, rename = "assistant.endpoint")]
    pub assistant_endpoint: Option<String>,
    #[serde(default, rename = "assistant.model")]
    pub assistant_model: Option<String>,
    #[serde(default, rename = "assistant.api_key")]
    pub assistant_api_key: Option<String>,
    #[serde(default = "d_timeout", rename = "assistant.timeout_secs")]
    pub assistant_timeout_secs: u64,
    #[serde(default, rename = "assistant.prompts_dir")]
    pub assistant_prompts_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        // Relative paths are taken relative to the config file.
        if let Some(base) = path.parent() {
            for p in [&mut config.repo_root, &mut config.journal_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(p) = config.assistant_prompts_dir.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// `explicit`, else `$CHOIR_CONFIG`, else `./choir.toml`.
    pub fn resolve_path(explicit: Option<&Path>) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("choir.toml"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        if self.selection_window == 0 {
            return invalid("selection_window", "must be at least 1");
        }
        if self.answer_top_k == 0 {
            return invalid("answer_top_k", "must be at least 1");
        }
        if !(-1.0..=1.0).contains(&self.relevance_threshold) {
            return invalid("relevance_threshold", "must be within [-1, 1]");
        }
        if self.max_chunk_chars < 16 {
            return invalid("max_chunk_chars", "must be at least 16");
        }
        if self.flow_ttl_hours == 0 {
            return invalid("flow_ttl_hours", "must be at least 1");
        }
        if self.embedder_dimension == 0 {
            return invalid("embedder.dimension", "must be at least 1");
        }
        let port = self.listen_addr.rsplit_once(':').map(|(host, port)| (host, port.parse::<u16>()));
        if !matches!(port, Some((host, Ok(_))) if !host.is_empty()) {
            return invalid("listen_addr", "must be host:port");
        }
        if self.managers.iter().any(|m| m.trim().is_empty()) {
            return invalid("managers", "ids must be non-empty");
        }
        if self.embedder == EmbedderKind::Remote && self.embedder_endpoint.is_none() {
            return invalid("embedder.endpoint", "required when embedder = \"remote\"");
        }
        if self.assistant == AssistantKind::Remote && self.assistant_endpoint.is_none() {
            return invalid("assistant.endpoint", "required when assistant = \"remote\"");
        }
        Ok(())
    }

    pub fn workflow_config(&self) -> WorkflowConfig {
        WorkflowConfig {
            managers: self.managers.clone(),
            selection_window: self.selection_window,
            answer_top_k: self.answer_top_k,
            flow_ttl: Duration::from_secs(self.flow_ttl_hours * 3600),
            background_rebuild: true,
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            max_chunk_chars: self.max_chunk_chars,
            relevance_threshold: self.relevance_threshold,
        }
    }

    pub fn build_embedder(&self) -> Arc<dyn Embedder> {
        match self.embedder {
            EmbedderKind::Hashed => Arc::new(HashedEmbedder::new(self.embedder_dimension)),
            EmbedderKind::Remote => Arc::new(RemoteEmbedder::new(
                self.embedder_endpoint.clone().unwrap_or_default(),
                self.embedder_dimension,
                Duration::from_secs(self.assistant_timeout_secs),
            )),
        }
    }

    pub fn build_assistant(&self) -> Result<Assistant, ConfigError> {
        Ok(match self.assistant {
            AssistantKind::Scripted => Assistant::new(Arc::new(ScriptedProvider::default())),
            AssistantKind::Remote => {
                let mut provider = RemoteProvider::new(
                    self.assistant_endpoint.clone().unwrap_or_default(),
                    Duration::from_secs(self.assistant_timeout_secs),
                )
                .with_model(self.assistant_model.clone())
                .with_api_key(self.assistant_api_key.clone());
                if let Some(dir) = &self.assistant_prompts_dir {
                    let prompts = PromptSet::load(dir).map_err(|e| ConfigError::Invalid {
                        key: "assistant.prompts_dir",
                        reason: e.to_string(),
                    })?;
                    provider = provider.with_prompts(prompts);
                }
                Assistant::new(Arc::new(provider))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!(c.selection_window, 10);
        assert_eq!(c.answer_top_k, 4);
        assert_eq!(c.max_chunk_chars, 1600);
        assert_eq!(c.relevance_threshold, 0.05);
        assert_eq!(c.embedder, EmbedderKind::Hashed);
        assert_eq!(c.assistant, AssistantKind::Scripted);
    }

    #[test]
    fn dotted_keys_and_unknown_keys() {
        let c = Config::from_toml_str(
            r#"
managers = ["U_MGR"]
assistant = "remote"
"assistant.endpoint" = "http://127.0.0.1:9/llm"
"assistant.model" = "m"
"embedder.dimension" = 64
"#,
        )
        .unwrap();
        assert_eq!(c.assistant_endpoint.as_deref(), Some("http://127.0.0.1:9/llm"));
        assert_eq!(c.embedder_dimension, 64);
        assert!(Config::from_toml_str("colour = 1").is_err());
        assert!(Config::from_toml_str("assistant = \"remote\"").is_err());
        assert!(Config::from_toml_str("selection_window = 0").is_err());
    }
}
