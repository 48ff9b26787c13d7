//! Layered run configuration: flags over environment over file over
//! defaults.
//!
//! Every key is flat. In the environment a key is spelled `RAVE_` plus the
//! upper-cased key (`RAVE_ALPHA=0.5`). API secrets live only in the
//! environment and never appear in a [`RunConfig`].

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::evaluation::{CorpusFormat, TieBreak, DEFAULT_GRID, DEFAULT_KS};
use crate::gateway::{
    Backend, Credentials, Gateway, GatewayConfig, GatewayMode, HttpBackend, HttpEndpoints, Simulator,
    ENV_EMBED_API_KEY, ENV_LLM_API_KEY, ENV_SEARCH_API_KEY, ENV_SEARCH_ENGINE_ID,
};
use crate::model::Strategy;
use crate::retrieval::RetrievalConfig;
use crate::scoring::{CredibilityRules, ScoringConfig};

pub const ENV_PREFIX: &str = "RAVE_";
const SECRET_VARS: [&str; 4] = [ENV_LLM_API_KEY, ENV_EMBED_API_KEY, ENV_SEARCH_API_KEY, ENV_SEARCH_ENGINE_ID];
const PATH_KEYS: [&str; 4] = ["cache_dir", "credibility_rules", "corpus", "output_dir"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// OpenAI-compatible chat and embeddings plus Google Custom Search.
    #[default]
    Http,
    /// Deterministic offline stand-in for all three services.
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: GatewayMode,
    pub backend: BackendKind,
    pub model_id: String,
    pub embedding_model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub results_per_query: u32,
    pub retries: u32,
    pub retry_backoff_ms: u64,
    pub timeout_secs: u64,
    pub llm_base_url: String,
    pub embed_base_url: String,
    pub search_url: String,
    pub alpha: f64,
    pub k: usize,
    pub strategy: Strategy,
    pub claim_fallback_search: bool,
    pub seed: u64,
    /// 0 means one worker per processor.
    pub workers: usize,
    pub cache_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub credibility_rules: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    pub corpus_format: String,
    pub dataset: String,
    pub output_dir: PathBuf,
    pub alpha_grid: Vec<f64>,
    pub k_values: Vec<usize>,
    pub bootstrap_resamples: usize,
    pub tie_break: TieBreak,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gw = GatewayConfig::default();
        let endpoints = HttpEndpoints::default();
        let scoring = ScoringConfig::default();
        Self {
            mode: gw.mode,
            backend: BackendKind::default(),
            model_id: gw.model_id,
            embedding_model_id: gw.embedding_model_id,
            temperature: gw.temperature,
            top_p: gw.top_p,
            max_tokens: gw.max_tokens,
            results_per_query: gw.results_per_query,
            retries: gw.retries,
            retry_backoff_ms: gw.retry_backoff_ms,
            timeout_secs: 60,
            llm_base_url: endpoints.llm_base_url,
            embed_base_url: endpoints.embed_base_url,
            search_url: endpoints.search_url,
            alpha: scoring.alpha,
            k: scoring.k,
            strategy: Strategy::Rave,
            claim_fallback_search: false,
            seed: 0,
            workers: 0,
            cache_dir: PathBuf::from("fixtures/cache"),
            credibility_rules: None,
            corpus: None,
            corpus_format: "canonical".into(),
            dataset: "corpus".into(),
            output_dir: PathBuf::from("out"),
            alpha_grid: DEFAULT_GRID.to_vec(),
            k_values: DEFAULT_KS.to_vec(),
            bootstrap_resamples: 1000,
            tie_break: TieBreak::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{source_name}: unknown configuration key {key:?}")]
    UnknownKey { source_name: String, key: String },
    #[error("{source_name}: {key} = {value:?}: {message}")]
    BadValue { source_name: String, key: String, value: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("{mode:?} mode with the http backend needs {}", .missing.join(", "))]
    MissingCredentials { mode: GatewayMode, missing: Vec<&'static str> },
    #[error("{0}")]
    Setup(String),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ScoringConfig { alpha: self.alpha, k: self.k }.validate().map_err(ConfigError::Invalid)?;
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.results_per_query == 0 {
            return bad("results_per_query must be >= 1".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.top_p) || self.top_p == 0.0 {
            return bad(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be >= 1".into());
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("alpha_grid value {a} outside [0, 1]"));
        }
        if self.k_values.contains(&0) {
            return bad("k_values must all be >= 1".into());
        }
        if self.bootstrap_resamples == 0 {
            return bad("bootstrap_resamples must be >= 1".into());
        }
        CorpusFormat::from_str(&self.corpus_format).map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            mode: self.mode,
            model_id: self.model_id.clone(),
            embedding_model_id: self.embedding_model_id.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            results_per_query: self.results_per_query,
            retries: self.retries,
            retry_backoff_ms: self.retry_backoff_ms,
        }
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig { alpha: self.alpha, k: self.k }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig { results_per_query: self.results_per_query, claim_fallback_search: self.claim_fallback_search }
    }

    pub fn corpus_format(&self) -> CorpusFormat {
        self.corpus_format.parse().expect("validated")
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }

    pub fn credibility_rules(&self) -> Result<CredibilityRules, ConfigError> {
        match &self.credibility_rules {
            None => Ok(CredibilityRules::default()),
            Some(p) => CredibilityRules::load(p).map_err(|e| ConfigError::Setup(e.to_string())),
        }
    }

    /// Build the gateway this configuration describes. Aborts early when a
    /// mode that can reach the network lacks credentials.
    pub fn gateway(&self, lookup: impl Fn(&str) -> Option<String>) -> Result<Gateway, ConfigError> {
        let backend: Arc<dyn Backend> = match (self.mode, self.backend) {
            (GatewayMode::Replay, _) => Arc::new(crate::gateway::NoBackend),
            (_, BackendKind::Simulator) => Arc::new(Simulator),
            (mode, BackendKind::Http) => {
                let credentials = Credentials::from_lookup(lookup);
                let missing = credentials.missing();
                if !missing.is_empty() {
                    return Err(ConfigError::MissingCredentials { mode, missing });
                }
                let endpoints = HttpEndpoints {
                    llm_base_url: self.llm_base_url.clone(),
                    embed_base_url: self.embed_base_url.clone(),
                    search_url: self.search_url.clone(),
                };
                let backend = HttpBackend::new(endpoints, credentials, Duration::from_secs(self.timeout_secs))
                    .map_err(|e| ConfigError::Setup(e.to_string()))?;
                Arc::new(backend)
            }
        };
        let result = if self.mode == GatewayMode::Live {
            Gateway::new(self.gateway_config(), backend, None)
        } else {
            Gateway::open(self.gateway_config(), backend, &self.cache_dir)
        };
        result.map_err(|e| ConfigError::Setup(e.to_string()))
    }
}

fn defaults_table() -> Table {
    match Value::try_from(RunConfig::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!(),
    }
}

fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = defaults_table().keys().cloned().collect();
    keys.extend(["credibility_rules", "corpus"].map(String::from));
    keys
}

/// Convert a textual override to the TOML type of the key's default.
fn coerce(key: &str, raw: &str, source_name: &str) -> Result<Value, ConfigError> {
    let bad = |message: String| ConfigError::BadValue {
        source_name: source_name.into(),
        key: key.into(),
        value: raw.into(),
        message,
    };
    let text = raw.trim();
    Ok(match defaults_table().get(key) {
        Some(Value::Integer(_)) => Value::Integer(text.parse().map_err(|e| bad(format!("{e}")))?),
        Some(Value::Float(_)) => Value::Float(text.parse().map_err(|e| bad(format!("{e}")))?),
        Some(Value::Boolean(_)) => Value::Boolean(text.parse().map_err(|e| bad(format!("{e}")))?),
        Some(Value::Array(_)) => {
            let inline = if text.starts_with('[') { text.to_string() } else { format!("[{text}]") };
            let table: Table = format!("v = {inline}").parse().map_err(|e| bad(format!("{e}")))?;
            table["v"].clone()
        }
        _ if key == "strategy" => {
            Value::String(Strategy::from_str(text).map_err(|e| bad(e.to_string()))?.as_str().to_string())
        }
        _ if matches!(key, "mode" | "backend" | "tie_break") => Value::String(text.to_ascii_lowercase()),
        _ => Value::String(text.to_string()),
    })
}

/// A raw override source: ordered (key, value) pairs.
pub type Overrides = Vec<(String, String)>;

/// `RAVE_*` variables as overrides. Secrets are skipped; any other
/// `RAVE_*` name that is not a configuration key is an error.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Result<Overrides, ConfigError> {
    let known = known_keys();
    let mut out = Vec::new();
    for (name, value) in vars {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
        if SECRET_VARS.contains(&name.as_str()) {
            continue;
        }
        let key = key.to_ascii_lowercase();
        if !known.contains(&key) {
            return Err(ConfigError::UnknownKey { source_name: "environment".into(), key: name });
        }
        out.push((key, value));
    }
    out.sort();
    Ok(out)
}

fn apply(table: &mut Table, overrides: &Overrides, source_name: &str) -> Result<(), ConfigError> {
    let known = known_keys();
    for (key, raw) in overrides {
        if !known.contains(key) {
            return Err(ConfigError::UnknownKey { source_name: source_name.into(), key: key.clone() });
        }
        table.insert(key.clone(), coerce(key, raw, source_name)?);
    }
    Ok(())
}

/// Resolve the effective configuration.
///
/// Relative paths inside a config file are taken relative to the file.
pub fn load_config(file: Option<&Path>, env: &Overrides, flags: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut table = defaults_table();
    if let Some(path) = file {
        let file_err = |message: String| ConfigError::File { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let file_table: Table = text.parse().map_err(|e: toml::de::Error| file_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (key, mut value) in file_table {
            if PATH_KEYS.contains(&key.as_str()) {
                if let Value::String(s) = &value {
                    value = Value::String(base.join(s).to_string_lossy().into_owned());
                }
            }
            table.insert(key, value);
        }
    }
    apply(&mut table, env, "environment")?;
    apply(&mut table, flags, "command line")?;
    let config: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        let message = e.message().to_string();
        match message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
            Some(key) => ConfigError::UnknownKey {
                source_name: file.map(|p| p.display().to_string()).unwrap_or_else(|| "config".into()),
                key: key.to_string(),
            },
            None => ConfigError::Invalid(message),
        }
    })?;
    config.validate()?;
    Ok(config)
}
