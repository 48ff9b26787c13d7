//! Clients for the chat model, the embedding service and web search, behind
//! a record/replay cache.
//!
//! A [`Gateway`] runs in one of three modes:
//!
//! * `Live` calls the backend and persists nothing.
//! * `Record` serves cache hits and calls the backend for misses, appending
//!   every new response to the fixture cache.
//! * `Replay` serves the cache only and never touches the backend.
//!
//! Cache keys are SHA-256 digests of the canonical JSON of
//! `{"service": kind, "request": normalized request}`. The only
//! normalization is trimming trailing whitespace from chat prompts.
//! Embeddings are cached per input text so vectors are shared between runs
//! that batch differently.

mod cache;
mod http;
pub mod simulator;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::digest::{canonical_json, sha256_hex};
use crate::model::domain_from_url;

pub use cache::{CacheEntry, FixtureCache};
pub use http::{
    Credentials, HttpBackend, HttpEndpoints, ENV_EMBED_API_KEY, ENV_LLM_API_KEY, ENV_SEARCH_API_KEY,
    ENV_SEARCH_ENGINE_ID,
};
pub use simulator::Simulator;

/// Chat completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model_id: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    pub num: u32,
}

/// One organic result as returned by the search service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchItem {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

/// A search result with its parsed domain and 1-based engine rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub text: String,
    pub domain: String,
    pub rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    Chat,
    Embed,
    Search,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 3] = [Self::Chat, Self::Embed, Self::Search];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Chat => "chat",
            Self::Embed => "embed",
            Self::Search => "search",
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    #[default]
    Replay,
    Record,
}

impl std::str::FromStr for GatewayMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(Self::Live),
            "replay" => Ok(Self::Replay),
            "record" => Ok(Self::Record),
            other => Err(format!("unknown gateway mode {other:?} (live | replay | record)")),
        }
    }
}

/// Content address of one request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub kind: ServiceKind,
    pub digest: String,
    /// The normalized request the digest was computed from.
    pub payload: Value,
}

impl CacheKey {
    fn from_payload(kind: ServiceKind, payload: Value) -> Self {
        let digest = sha256_hex(canonical_json(&json!({ "service": kind.as_str(), "request": payload })));
        Self { kind, digest, payload }
    }

    pub fn chat(request: &LlmRequest) -> Self {
        Self::from_payload(
            ServiceKind::Chat,
            json!({
                "prompt": request.prompt.trim_end(),
                "temperature": request.temperature,
                "top_p": request.top_p,
                "max_tokens": request.max_tokens,
                "model_id": request.model_id,
            }),
        )
    }

    pub fn embed(model_id: &str, text: &str) -> Self {
        Self::from_payload(ServiceKind::Embed, json!({ "model_id": model_id, "text": text }))
    }

    pub fn search(request: &SearchRequest) -> Self {
        Self::from_payload(ServiceKind::Search, json!({ "query": request.query, "num": request.num }))
    }
}

/// Failure of a single backend call.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    /// Connection, timeout or similar; worth retrying.
    #[error("transport failure: {0}")]
    Transient(String),
    /// The service answered with a non-success status.
    #[error("service returned status {status}: {message}")]
    Service { status: u16, message: String },
    /// The service answered 2xx with a body we cannot use.
    #[error("malformed service response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("replay cache miss for {kind} request {key}")]
    CacheMiss { kind: ServiceKind, key: String },
    #[error("{kind} request failed after {attempts} attempts: {last}")]
    RetriesExhausted { kind: ServiceKind, attempts: u32, last: String },
    #[error("{kind} service returned status {status}: {message}")]
    Service { kind: ServiceKind, status: u16, message: String },
    #[error("malformed {kind} response: {message}")]
    Malformed { kind: ServiceKind, message: String },
    #[error("invalid {kind} request: {message}")]
    InvalidRequest { kind: ServiceKind, message: String },
    #[error("fixture cache error: {0}")]
    Cache(String),
}

/// The three external services.
pub trait Backend: Send + Sync {
    fn chat(&self, request: &LlmRequest) -> Result<String, TransportError>;
    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, TransportError>;
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchItem>, TransportError>;
}

/// A backend that must never be reached; every call is a transient failure.
#[derive(Debug, Default)]
pub struct NoBackend;

impl Backend for NoBackend {
    fn chat(&self, _: &LlmRequest) -> Result<String, TransportError> {
        Err(TransportError::Transient("no backend configured".into()))
    }
    fn embed(&self, _: &EmbedRequest) -> Result<Vec<Vec<f64>>, TransportError> {
        Err(TransportError::Transient("no backend configured".into()))
    }
    fn search(&self, _: &SearchRequest) -> Result<Vec<SearchItem>, TransportError> {
        Err(TransportError::Transient("no backend configured".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub model_id: String,
    pub embedding_model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub results_per_query: u32,
    pub retries: u32,
    pub retry_backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Replay,
            model_id: "gpt-4o-2024-08-06".into(),
            embedding_model_id: "text-embedding-3-small".into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 500,
            results_per_query: 5,
            retries: 3,
            retry_backoff_ms: 500,
        }
    }
}

const EMBED_BATCH: usize = 64;

pub struct Gateway {
    config: GatewayConfig,
    backend: Arc<dyn Backend>,
    cache: Option<FixtureCache>,
    backend_calls: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("config", &self.config)
            .field("cache", &self.cache.as_ref().map(|c| c.dir().to_path_buf()))
            .finish()
    }
}

impl Gateway {
    /// Build a gateway. `Record` and `Replay` require a cache.
    pub fn new(
        config: GatewayConfig,
        backend: Arc<dyn Backend>,
        cache: Option<FixtureCache>,
    ) -> Result<Self, GatewayError> {
        if config.mode != GatewayMode::Live && cache.is_none() {
            return Err(GatewayError::Cache(format!("{:?} mode needs a fixture cache directory", config.mode)));
        }
        Ok(Self { config, backend, cache, backend_calls: AtomicU64::new(0) })
    }

    /// Convenience: open (or create) the cache at `dir` and build a gateway.
    pub fn open(config: GatewayConfig, backend: Arc<dyn Backend>, dir: &Path) -> Result<Self, GatewayError> {
        let cache = FixtureCache::open(dir).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Self::new(config, backend, Some(cache))
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn mode(&self) -> GatewayMode {
        self.config.mode
    }

    pub fn cache(&self) -> Option<&FixtureCache> {
        self.cache.as_ref()
    }

    /// Number of backend invocations made so far (retries included).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    /// Request with the configured sampling settings.
    pub fn llm_request(&self, prompt: impl Into<String>) -> LlmRequest {
        LlmRequest {
            prompt: prompt.into(),
            temperature: self.config.temperature,
            top_p: self.config.top_p,
            max_tokens: self.config.max_tokens,
            model_id: self.config.model_id.clone(),
        }
    }

    fn lookup(&self, key: &CacheKey) -> Option<Value> {
        match self.config.mode {
            GatewayMode::Live => None,
            _ => self.cache.as_ref().and_then(|c| c.get(&key.digest)),
        }
    }

    fn store(&self, key: &CacheKey, response: Value) -> Result<(), GatewayError> {
        if self.config.mode == GatewayMode::Record {
            let cache = self.cache.as_ref().expect("record mode always has a cache");
            cache.put(key, response).map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(())
    }

    fn miss(&self, key: &CacheKey) -> GatewayError {
        GatewayError::CacheMiss { kind: key.kind, key: key.digest.clone() }
    }

    fn call<T>(&self, kind: ServiceKind, f: impl Fn() -> Result<T, TransportError>) -> Result<T, GatewayError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match f() {
                Ok(v) => return Ok(v),
                Err(TransportError::Transient(msg)) => {
                    log::warn!("{kind} attempt {} of {attempts} failed: {msg}", attempt + 1);
                    last = msg;
                }
                Err(TransportError::Service { status, message }) => {
                    return Err(GatewayError::Service { kind, status, message })
                }
                Err(TransportError::Malformed(message)) => return Err(GatewayError::Malformed { kind, message }),
            }
        }
        Err(GatewayError::RetriesExhausted { kind, attempts, last })
    }

    /// Raw completion text for `request`.
    pub fn chat(&self, request: &LlmRequest) -> Result<String, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest { kind: ServiceKind::Chat, message: "empty prompt".into() });
        }
        let key = CacheKey::chat(request);
        if let Some(hit) = self.lookup(&key) {
            return hit
                .get("text")
                .and_then(Value::as_str)
                .map(str::to_owned)
                .ok_or_else(|| GatewayError::Cache(format!("chat entry {} has no text field", key.digest)));
        }
        if self.config.mode == GatewayMode::Replay {
            return Err(self.miss(&key));
        }
        let text = self.call(ServiceKind::Chat, || self.backend.chat(request))?;
        self.store(&key, json!({ "text": text }))?;
        Ok(text)
    }

    /// One vector per input text, in input order, all of one dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let kind = ServiceKind::Embed;
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest { kind, message: "no texts".into() });
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest { kind, message: format!("text {i} is empty") });
        }
        let model_id = &self.config.embedding_model_id;
        let mut found: HashMap<&str, Vec<f64>> = HashMap::new();
        let mut missing: Vec<&String> = Vec::new();
        for text in texts {
            if found.contains_key(text.as_str()) || missing.contains(&text) {
                continue;
            }
            let key = CacheKey::embed(model_id, text);
            match self.lookup(&key) {
                Some(hit) => {
                    let vector: Vec<f64> = serde_json::from_value(hit.get("vector").cloned().unwrap_or(Value::Null))
                        .map_err(|e| GatewayError::Cache(format!("embed entry {}: {e}", key.digest)))?;
                    found.insert(text, vector);
                }
                None if self.config.mode == GatewayMode::Replay => return Err(self.miss(&key)),
                None => missing.push(text),
            }
        }
        for chunk in missing.chunks(EMBED_BATCH) {
            let request =
                EmbedRequest { model_id: model_id.clone(), texts: chunk.iter().map(|t| t.to_string()).collect() };
            let vectors = self.call(kind, || self.backend.embed(&request))?;
            if vectors.len() != chunk.len() {
                return Err(GatewayError::Malformed {
                    kind,
                    message: format!("asked for {} vectors, got {}", chunk.len(), vectors.len()),
                });
            }
            for (text, vector) in chunk.iter().zip(vectors) {
                self.store(&CacheKey::embed(model_id, text), json!({ "vector": vector }))?;
                found.insert(text.as_str(), vector);
            }
        }
        let out: Vec<Vec<f64>> = texts.iter().map(|t| found[t.as_str()].clone()).collect();
        let dim = out[0].len();
        if dim == 0 || out.iter().any(|v| v.len() != dim) {
            return Err(GatewayError::Malformed { kind, message: "inconsistent embedding dimensions".into() });
        }
        Ok(out)
    }

    /// Up to `results_per_query` hits in engine order. Results without a
    /// parseable host are skipped; ranks are 1..n over what is kept.
    pub fn search(&self, query: &str, results_per_query: u32) -> Result<Vec<SearchHit>, GatewayError> {
        let kind = ServiceKind::Search;
        if query.trim().is_empty() {
            return Err(GatewayError::InvalidRequest { kind, message: "empty query".into() });
        }
        if results_per_query == 0 {
            return Err(GatewayError::InvalidRequest { kind, message: "results_per_query must be >= 1".into() });
        }
        let request = SearchRequest { query: query.to_string(), num: results_per_query };
        let key = CacheKey::search(&request);
        let items: Vec<SearchItem> = match self.lookup(&key) {
            Some(hit) => serde_json::from_value(hit.get("items").cloned().unwrap_or(Value::Null))
                .map_err(|e| GatewayError::Cache(format!("search entry {}: {e}", key.digest)))?,
            None if self.config.mode == GatewayMode::Replay => return Err(self.miss(&key)),
            None => {
                let items = self.call(kind, || self.backend.search(&request))?;
                self.store(&key, json!({ "items": items }))?;
                items
            }
        };
        let hits = items
            .into_iter()
            .filter_map(|item| {
                let domain = domain_from_url(&item.url)?;
                Some((item, domain))
            })
            .take(results_per_query as usize)
            .enumerate()
            .map(|(i, (item, domain))| SearchHit {
                title: item.title,
                url: item.url,
                text: item.snippet,
                domain,
                rank: i as u32 + 1,
            })
            .collect();
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Counts calls and replays a script of per-call results.
    #[derive(Default)]
    struct Scripted {
        calls: AtomicU64,
        chat_script: Mutex<Vec<Result<String, TransportError>>>,
        items: Vec<SearchItem>,
    }

    impl Backend for Scripted {
        fn chat(&self, req: &LlmRequest) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut script = self.chat_script.lock().unwrap();
            if script.is_empty() {
                Ok(format!("echo: {}", req.prompt))
            } else {
                script.remove(0)
            }
        }
        fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(req.texts.iter().map(|t| vec![t.len() as f64, 1.0, 0.5]).collect())
        }
        fn search(&self, _: &SearchRequest) -> Result<Vec<SearchItem>, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.items.clone())
        }
    }

    fn config(mode: GatewayMode) -> GatewayConfig {
        GatewayConfig { mode, retry_backoff_ms: 0, ..GatewayConfig::default() }
    }

    #[test]
    fn chat_key_is_pure_and_trims_trailing_whitespace() {
        let gw = Gateway::new(config(GatewayMode::Live), Arc::new(NoBackend), None).unwrap();
        let a = CacheKey::chat(&gw.llm_request("decide: x"));
        let b = CacheKey::chat(&gw.llm_request("decide: x  \n"));
        let c = CacheKey::chat(&gw.llm_request(" decide: x"));
        assert_eq!(a, b);
        assert_ne!(a.digest, c.digest);
        let mut other = gw.llm_request("decide: x");
        other.temperature = 0.7;
        assert_ne!(a.digest, CacheKey::chat(&other).digest);
        assert_eq!(a.digest.len(), 64);
    }

    #[test]
    fn record_then_replay_is_byte_identical_and_offline() {
        let dir = tempfile::tempdir().unwrap();
        let backend = Arc::new(Scripted::default());
        let recorder = Gateway::open(config(GatewayMode::Record), backend.clone(), dir.path()).unwrap();
        let req = recorder.llm_request("decide: <claim c7>");
        let recorded = recorder.chat(&req).unwrap();
        // a second record-mode call is served from the cache
        assert_eq!(recorder.chat(&req).unwrap(), recorded);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        drop(recorder);

        let stub = Arc::new(Scripted::default());
        let replay = Gateway::open(config(GatewayMode::Replay), stub.clone(), dir.path()).unwrap();
        let a = replay.chat(&req).unwrap();
        let b = replay.chat(&req).unwrap();
        assert_eq!(a.as_bytes(), recorded.as_bytes());
        assert_eq!(a, b);
        assert_eq!(stub.calls.load(Ordering::SeqCst), 0);
        assert_eq!(replay.backend_calls(), 0);
    }

    #[test]
    fn replay_miss_names_key_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let stub = Arc::new(Scripted::default());
        let gw = Gateway::open(config(GatewayMode::Replay), stub.clone(), dir.path()).unwrap();
        let req = gw.llm_request("never recorded");
        let key = CacheKey::chat(&req).digest;
        match gw.chat(&req) {
            Err(GatewayError::CacheMiss { kind: ServiceKind::Chat, key: k }) => assert_eq!(k, key),
            other => panic!("expected miss, got {other:?}"),
        }
        assert!(gw.search("Sinovac", 5).is_err());
        assert!(gw.embed(&["a".to_string()]).is_err());
        assert_eq!(stub.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn transient_errors_retry_then_fail_terminally() {
        let backend = Arc::new(Scripted {
            chat_script: Mutex::new(vec![
                Err(TransportError::Transient("reset".into())),
                Err(TransportError::Transient("reset".into())),
                Ok("fine".into()),
            ]),
            ..Default::default()
        });
        let gw = Gateway::new(config(GatewayMode::Live), backend.clone(), None).unwrap();
        assert_eq!(gw.chat(&gw.llm_request("p")).unwrap(), "fine");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);

        let backend = Arc::new(Scripted {
            chat_script: Mutex::new((0..10).map(|_| Err(TransportError::Transient("down".into()))).collect()),
            ..Default::default()
        });
        let gw = Gateway::new(config(GatewayMode::Live), backend.clone(), None).unwrap();
        let err = gw.chat(&gw.llm_request("p")).unwrap_err();
        assert!(matches!(err, GatewayError::RetriesExhausted { attempts: 4, .. }), "{err:?}");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn service_errors_are_not_retried() {
        let backend = Arc::new(Scripted {
            chat_script: Mutex::new(vec![Err(TransportError::Service { status: 401, message: "bad key".into() })]),
            ..Default::default()
        });
        let gw = Gateway::new(config(GatewayMode::Live), backend.clone(), None).unwrap();
        let err = gw.chat(&gw.llm_request("p")).unwrap_err();
        assert!(matches!(err, GatewayError::Service { status: 401, .. }));
        assert!(err.to_string().contains("bad key"));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn embed_is_deterministic_and_shaped() {
        let gw = Gateway::new(config(GatewayMode::Live), Arc::new(Scripted::default()), None).unwrap();
        let v = gw.embed(&["a".into(), "a".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        let v = gw.embed(&["a".into(), "bb".into(), "ccc".into()]).unwrap();
        assert!(v.iter().all(|x| x.len() == v[0].len()));
        assert!(gw.embed(&[]).is_err());
        assert!(gw.embed(&["".into()]).is_err());
    }

    #[test]
    fn search_ranks_and_empty_results() {
        let items = vec![
            SearchItem { title: "a".into(), url: "https://www.bbc.com/a".into(), snippet: "x".into() },
            SearchItem { title: "b".into(), url: "not a url".into(), snippet: "x".into() },
            SearchItem { title: "c".into(), url: "https://cdc.gov/c".into(), snippet: "x".into() },
        ];
        let gw =
            Gateway::new(config(GatewayMode::Live), Arc::new(Scripted { items, ..Default::default() }), None).unwrap();
        let hits = gw.search("Sinovac", 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(hits[0].domain, "bbc.com");
        assert_eq!(gw.search("q", 1).unwrap().len(), 1);

        let empty = Gateway::new(config(GatewayMode::Live), Arc::new(Scripted::default()), None).unwrap();
        assert!(empty.search("nothing", 5).unwrap().is_empty());
        assert!(empty.search(" ", 5).is_err());
        assert!(empty.search("q", 0).is_err());
    }

    #[test]
    fn record_and_replay_need_a_cache() {
        assert!(Gateway::new(config(GatewayMode::Replay), Arc::new(NoBackend), None).is_err());
        assert!(Gateway::new(config(GatewayMode::Record), Arc::new(NoBackend), None).is_err());
    }
}
