//! Run configuration. Layers, lowest first: built-in defaults, `CLID_*`
//! environment variables, a TOML file, command-line overrides.
//!
//! Credentials never appear here: the HTTP provider reads its key from the
//! environment variable named by `provider.api_key_env`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::detectors::{DetectorParams, SystemKind};
use crate::embedding::{Embedder, HashEmbedder, HttpEmbedder};
use crate::llm::{HttpProvider, HttpProviderConfig, LlmProvider, MatchMode, ScorePolicy, ScriptedProvider};
use crate::oracle::OracleProvider;
use crate::synthetic::MutationMarker;
use crate::util::read_jsonl_file;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("provider setup: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Oracle,
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSettings {
    pub kind: Option<ProviderKind>,
    /// Transcript file for the scripted provider.
    pub transcript: Option<PathBuf>,
    pub match_mode: MatchMode,
    /// Mutation markers for the oracle provider.
    pub markers: Option<PathBuf>,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub max_tokens: u32,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        let http = HttpProviderConfig::default();
        ProviderSettings {
            kind: None,
            transcript: None,
            match_mode: MatchMode::Salient,
            markers: None,
            base_url: http.base_url,
            model: http.model,
            api_key_env: http.api_key_env,
            timeout_secs: http.timeout_secs,
            max_in_flight: http.max_in_flight,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSettings {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub url: String,
    pub max_in_flight: usize,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        EmbedderSettings { kind: EmbedderKind::Hash, dim: 256, url: String::new(), max_in_flight: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub snapshot: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub facts: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub system: SystemKind,
    pub budget: usize,
    pub k_search: usize,
    pub k_baseline: usize,
    pub k_clarify: usize,
    pub rerank: bool,
    pub threshold: f64,
    pub count_threshold: usize,
    pub score_policy: ScorePolicy,
    pub seed: u64,
    pub jobs: usize,
    pub provider: ProviderSettings,
    pub embedder: EmbedderSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = DetectorParams::default();
        RunConfig {
            snapshot: None,
            index: None,
            facts: None,
            output_dir: PathBuf::from("out"),
            system: SystemKind::Agent,
            budget: p.budget,
            k_search: p.k_search,
            k_baseline: p.k_baseline,
            k_clarify: p.k_clarify,
            rerank: p.rerank,
            threshold: 0.5,
            count_threshold: p.count_threshold,
            score_policy: ScorePolicy::Strict,
            seed: 0,
            jobs: 1,
            provider: ProviderSettings::default(),
            embedder: EmbedderSettings::default(),
        }
    }
}

/// Dotted keys settable from the environment and the command line.
pub const KEYS: &[&str] = &[
    "snapshot",
    "index",
    "facts",
    "output_dir",
    "system",
    "budget",
    "k_search",
    "k_baseline",
    "k_clarify",
    "rerank",
    "threshold",
    "count_threshold",
    "score_policy",
    "seed",
    "jobs",
    "provider.kind",
    "provider.transcript",
    "provider.match_mode",
    "provider.markers",
    "provider.base_url",
    "provider.model",
    "provider.api_key_env",
    "provider.timeout_secs",
    "provider.max_in_flight",
    "provider.max_tokens",
    "embedder.kind",
    "embedder.dim",
    "embedder.url",
    "embedder.max_in_flight",
];

/// `provider.base_url` -> `CLID_PROVIDER_BASE_URL`.
pub fn env_name(key: &str) -> String {
    format!("CLID_{}", key.replace('.', "_").to_ascii_uppercase())
}

fn scalar(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else {
        toml::Value::String(raw.to_string())
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) {
    match key.split_once('.') {
        Some((head, rest)) => {
            let entry = table.entry(head.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = entry {
                set_dotted(t, rest, value);
            }
        }
        None => {
            table.insert(key.to_string(), value);
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Typed scalars fix up values whose string form parses as another type
/// (e.g. a model name of `4`), using the default's type as the guide.
fn coerce(defaults: &toml::Table, key: &str, value: toml::Value) -> toml::Value {
    let mut cur = defaults;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        match cur.get(*p) {
            Some(toml::Value::Table(t)) => cur = t,
            _ => return value,
        }
    }
    match (cur.get(parts[parts.len() - 1]), value) {
        (Some(toml::Value::String(_)) | None, v) if !v.is_str() => toml::Value::String(match v {
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => other.to_string(),
        }),
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    }
}

fn overlay_from_pairs(
    defaults: &toml::Table,
    pairs: impl IntoIterator<Item = (String, String)>,
) -> Result<toml::Table, ConfigError> {
    let mut t = toml::Table::new();
    for (k, v) in pairs {
        if !KEYS.contains(&k.as_str()) {
            return Err(ConfigError::Invalid(format!("unknown key `{k}`")));
        }
        set_dotted(&mut t, &k, coerce(defaults, &k, scalar(&v)));
    }
    Ok(t)
}

/// Builds a config from the layers. `env` is usually `std::env::vars()`.
pub fn resolve(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let defaults = toml::Table::try_from(RunConfig::default()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut table = defaults.clone();

    let env: std::collections::HashMap<String, String> = env.into_iter().collect();
    let env_pairs: Vec<(String, String)> =
        KEYS.iter().filter_map(|k| env.get(&env_name(k)).map(|v| (k.to_string(), v.clone()))).collect();
    merge(&mut table, overlay_from_pairs(&defaults, env_pairs)?);

    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.to_path_buf(), message: e.to_string() })?;
        let file_table: toml::Table = toml::from_str(&text)
            .map_err(|e| ConfigError::File { path: path.to_path_buf(), message: e.to_string() })?;
        merge(&mut table, file_table);
    }

    merge(&mut table, overlay_from_pairs(&defaults, overrides.iter().cloned())?);
    let config: RunConfig =
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
    config.check_ranges()?;
    Ok(config)
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| ConfigError::Override(s.to_string()))
}

impl RunConfig {
    pub fn detector_params(&self) -> DetectorParams {
        DetectorParams {
            budget: self.budget,
            k_search: self.k_search,
            k_baseline: self.k_baseline,
            k_clarify: self.k_clarify,
            rerank: self.rerank,
            count_threshold: self.count_threshold,
        }
    }

    fn check_ranges(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Validation(m.to_string()));
        if self.budget < 1 {
            return bad("budget must be at least 1");
        }
        if self.k_search < 1 || self.k_baseline < 1 || self.k_clarify < 1 {
            return bad("k values must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if self.count_threshold < 1 {
            return bad("count_threshold must be at least 1");
        }
        if self.jobs < 1 {
            return bad("jobs must be at least 1");
        }
        Ok(())
    }

    /// Checks run before any provider-backed work starts.
    pub fn validate_for_provider_use(&self) -> Result<ProviderKind, ConfigError> {
        let kind = self.provider.kind.ok_or_else(|| {
            ConfigError::Validation("a provider is required (set provider.kind to oracle, scripted or http)".into())
        })?;
        match kind {
            ProviderKind::Scripted if self.provider.transcript.is_none() => {
                Err(ConfigError::Validation("scripted provider needs provider.transcript".into()))
            }
            ProviderKind::Http if self.provider.base_url.trim().is_empty() => {
                Err(ConfigError::Validation("http provider needs provider.base_url".into()))
            }
            k => Ok(k),
        }
    }

    pub fn build_provider(&self) -> Result<Arc<dyn LlmProvider>, ConfigError> {
        let p = &self.provider;
        Ok(match self.validate_for_provider_use()? {
            ProviderKind::Oracle => {
                let markers: Vec<MutationMarker> = match &p.markers {
                    Some(path) => read_jsonl_file(path).map_err(|e| ConfigError::Provider(e.to_string()))?,
                    None => Vec::new(),
                };
                Arc::new(OracleProvider::new(&markers))
            }
            ProviderKind::Scripted => {
                let path = p.transcript.as_ref().expect("validated");
                Arc::new(
                    ScriptedProvider::from_file(path, p.match_mode)
                        .map_err(|e| ConfigError::Provider(e.to_string()))?,
                )
            }
            ProviderKind::Http => Arc::new(
                HttpProvider::new(HttpProviderConfig {
                    base_url: p.base_url.clone(),
                    model: p.model.clone(),
                    api_key_env: p.api_key_env.clone(),
                    timeout_secs: p.timeout_secs,
                    max_in_flight: p.max_in_flight,
                })
                .map_err(|e| ConfigError::Provider(e.to_string()))?,
            ),
        })
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        let e = &self.embedder;
        Ok(match e.kind {
            EmbedderKind::Hash => Arc::new(HashEmbedder::new(e.dim)),
            EmbedderKind::Http => Arc::new(
                HttpEmbedder::new(e.url.clone(), e.dim, e.max_in_flight)
                    .map_err(|err| ConfigError::Provider(err.to_string()))?,
            ),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Writes `resolved_config.toml` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}
