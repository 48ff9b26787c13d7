//! HTTP backend: OpenAI-compatible chat and embeddings, Google Programmable
//! Search for web results.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, EmbedRequest, LlmRequest, SearchItem, SearchRequest, TransportError};

pub const ENV_LLM_API_KEY: &str = "RAVE_LLM_API_KEY";
pub const ENV_EMBED_API_KEY: &str = "RAVE_EMBED_API_KEY";
pub const ENV_SEARCH_API_KEY: &str = "RAVE_SEARCH_API_KEY";
pub const ENV_SEARCH_ENGINE_ID: &str = "RAVE_SEARCH_ENGINE_ID";

/// API secrets. Read from the environment only.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Credentials {
    pub llm_api_key: Option<String>,
    pub embed_api_key: Option<String>,
    pub search_api_key: Option<String>,
    pub search_engine_id: Option<String>,
}

impl std::fmt::Debug for Credentials {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mark = |v: &Option<String>| if v.is_some() { "<set>" } else { "<unset>" };
        f.debug_struct("Credentials")
            .field("llm_api_key", &mark(&self.llm_api_key))
            .field("embed_api_key", &mark(&self.embed_api_key))
            .field("search_api_key", &mark(&self.search_api_key))
            .field("search_engine_id", &mark(&self.search_engine_id))
            .finish()
    }
}

impl Credentials {
    /// `lookup` is normally `|k| std::env::var(k).ok()`. The embedding key
    /// falls back to the LLM key.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Self {
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        let llm_api_key = get(ENV_LLM_API_KEY);
        Self {
            embed_api_key: get(ENV_EMBED_API_KEY).or_else(|| llm_api_key.clone()),
            llm_api_key,
            search_api_key: get(ENV_SEARCH_API_KEY),
            search_engine_id: get(ENV_SEARCH_ENGINE_ID),
        }
    }

    /// Names of the required variables that are not set.
    pub fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.llm_api_key.is_none() {
            out.push(ENV_LLM_API_KEY);
        }
        if self.embed_api_key.is_none() {
            out.push(ENV_EMBED_API_KEY);
        }
        if self.search_api_key.is_none() {
            out.push(ENV_SEARCH_API_KEY);
        }
        if self.search_engine_id.is_none() {
            out.push(ENV_SEARCH_ENGINE_ID);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpEndpoints {
    pub llm_base_url: String,
    pub embed_base_url: String,
    pub search_url: String,
}

impl Default for HttpEndpoints {
    fn default() -> Self {
        Self {
            llm_base_url: "https://api.openai.com/v1".into(),
            embed_base_url: "https://api.openai.com/v1".into(),
            search_url: "https://www.googleapis.com/customsearch/v1".into(),
        }
    }
}

pub struct HttpBackend {
    client: Client,
    endpoints: HttpEndpoints,
    credentials: Credentials,
}

impl HttpBackend {
    pub fn new(endpoints: HttpEndpoints, credentials: Credentials, timeout: Duration) -> Result<Self, TransportError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Transient(format!("building http client: {e}")))?;
        Ok(Self { client, endpoints, credentials })
    }

    fn key<'a>(value: &'a Option<String>, name: &str) -> Result<&'a str, TransportError> {
        value.as_deref().ok_or_else(|| TransportError::Service { status: 401, message: format!("{name} is not set") })
    }
}

fn send(request: reqwest::blocking::RequestBuilder) -> Result<Value, TransportError> {
    let response: Response = request.send().map_err(|e| TransportError::Transient(e.to_string()))?;
    let status = response.status();
    let body = response.text().map_err(|e| TransportError::Transient(e.to_string()))?;
    if !status.is_success() {
        return Err(TransportError::Service { status: status.as_u16(), message: service_message(&body) });
    }
    serde_json::from_str(&body).map_err(|e| TransportError::Malformed(format!("{e}: {}", truncate(&body, 200))))
}

/// Both OpenAI and Google wrap failures as `{"error": {"message": ...}}`.
fn service_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_else(|| truncate(body, 500).to_string())
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Backend for HttpBackend {
    fn chat(&self, request: &LlmRequest) -> Result<String, TransportError> {
        let key = Self::key(&self.credentials.llm_api_key, super::ENV_LLM_API_KEY)?;
        let body = json!({
            "model": request.model_id,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        });
        let url = format!("{}/chat/completions", self.endpoints.llm_base_url.trim_end_matches('/'));
        let value = send(self.client.post(url).bearer_auth(key).json(&body))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Malformed("no choices[0].message.content".into()))
    }

    fn embed(&self, request: &EmbedRequest) -> Result<Vec<Vec<f64>>, TransportError> {
        #[derive(Deserialize)]
        struct Item {
            index: usize,
            embedding: Vec<f64>,
        }
        #[derive(Deserialize)]
        struct Body {
            data: Vec<Item>,
        }
        let key = Self::key(&self.credentials.embed_api_key, super::ENV_EMBED_API_KEY)?;
        let url = format!("{}/embeddings", self.endpoints.embed_base_url.trim_end_matches('/'));
        let body = json!({ "model": request.model_id, "input": request.texts });
        let value = send(self.client.post(url).bearer_auth(key).json(&body))?;
        let mut parsed: Body = serde_json::from_value(value).map_err(|e| TransportError::Malformed(e.to_string()))?;
        parsed.data.sort_by_key(|i| i.index);
        Ok(parsed.data.into_iter().map(|i| i.embedding).collect())
    }

    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchItem>, TransportError> {
        #[derive(Deserialize)]
        struct Item {
            #[serde(default)]
            title: String,
            link: String,
            #[serde(default)]
            snippet: String,
        }
        #[derive(Deserialize)]
        struct Page {
            #[serde(default)]
            items: Vec<Item>,
        }
        let key = Self::key(&self.credentials.search_api_key, super::ENV_SEARCH_API_KEY)?;
        let cx = Self::key(&self.credentials.search_engine_id, super::ENV_SEARCH_ENGINE_ID)?;
        let wanted = request.num as usize;
        let mut out = Vec::new();
        // the API serves at most 10 results per page
        while out.len() < wanted {
            let num = (wanted - out.len()).min(10);
            let start = out.len() + 1;
            let query = [
                ("key", key.to_string()),
                ("cx", cx.to_string()),
                ("q", request.query.clone()),
                ("num", num.to_string()),
                ("start", start.to_string()),
            ];
            let value = send(self.client.get(&self.endpoints.search_url).query(&query))?;
            let page: Page = serde_json::from_value(value).map_err(|e| TransportError::Malformed(e.to_string()))?;
            let got = page.items.len();
            out.extend(page.items.into_iter().map(|i| SearchItem { title: i.title, url: i.link, snippet: i.snippet }));
            if got < num {
                break;
            }
        }
        out.truncate(wanted);
        Ok(out)
    }
}
