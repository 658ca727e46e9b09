//! Completion and embedding clients over OpenAI-compatible HTTP endpoints or the mock
//! oracle, fronted by the transcript cache.

pub mod cache;
pub mod mock;
pub mod ratelimit;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use crate::corpus::EmotionTaxonomy;
use crate::error::{Error, Result};
use crate::hashing::StableHasher;
use crate::prompt::PromptTemplate;

pub use cache::{DecodingParams, TokenUsage, Transcript, TranscriptCache};
pub use mock::MockOracle;
pub use ratelimit::RateLimiter;

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 128;
const MOCK_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    HttpChat,
    HttpCompletion,
    Mock,
}

impl EndpointKind {
    pub fn is_http(self) -> bool {
        !matches!(self, EndpointKind::Mock)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EndpointKind::HttpChat => "http_chat",
            EndpointKind::HttpCompletion => "http_completion",
            EndpointKind::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff with jitter in `[0.5, 1.0)` of the nominal delay.
    fn delay(&self, attempt: u32) -> Duration {
        let nominal = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        let jitter: f64 = rand::thread_rng().gen_range(0.5..1.0);
        Duration::from_millis((nominal as f64 * jitter) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSettings {
    pub prior_seed: u64,
    pub lambda: f64,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

fn default_timeout() -> u64 {
    60
}

fn default_name() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    #[serde(default = "default_name")]
    pub name: String,
    pub kind: EndpointKind,
    #[serde(default)]
    pub base_url: Option<String>,
    pub model_id: String,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub mock: Option<MockSettings>,
}

impl ModelEndpoint {
    pub fn mock(model_id: &str, prior_seed: u64, lambda: f64) -> Self {
        ModelEndpoint {
            name: "mock".into(),
            kind: EndpointKind::Mock,
            base_url: None,
            model_id: model_id.into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            api_key_env: None,
            embedding_model: None,
            retry: RetryPolicy::default(),
            requests_per_minute: None,
            timeout_secs: default_timeout(),
            mock: Some(MockSettings { prior_seed, lambda }),
        }
    }

    pub fn http(kind: EndpointKind, base_url: &str, model_id: &str) -> Self {
        ModelEndpoint {
            name: model_id.into(),
            kind,
            base_url: Some(base_url.trim_end_matches('/').into()),
            model_id: model_id.into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            api_key_env: None,
            embedding_model: None,
            retry: RetryPolicy::default(),
            requests_per_minute: None,
            timeout_secs: default_timeout(),
            mock: None,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.temperature != 0.0 {
            errs.push(format!(
                "endpoint {}: temperature must be 0, got {}",
                self.name, self.temperature
            ));
        }
        if self.max_output_tokens == 0 {
            errs.push(format!("endpoint {}: max_output_tokens must be positive", self.name));
        }
        match self.kind {
            EndpointKind::Mock => match &self.mock {
                None => errs.push(format!("endpoint {}: mock kind needs [endpoint.mock]", self.name)),
                Some(m) if !(0.0..=1.0).contains(&m.lambda) => errs.push(format!(
                    "endpoint {}: mock.lambda must be in [0, 1], got {}",
                    self.name, m.lambda
                )),
                Some(_) => {}
            },
            _ => {
                if self.base_url.as_deref().is_none_or(str::is_empty) {
                    errs.push(format!(
                        "endpoint {}: base_url is required for {}",
                        self.name,
                        self.kind.as_str()
                    ));
                }
            }
        }
        errs
    }

    pub fn params(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.base_url.as_deref().unwrap_or_default().trim_end_matches('/'),
            path
        )
    }

    fn identity(&self) -> String {
        format!(
            "{} ({} {})",
            self.name,
            self.kind.as_str(),
            self.base_url.as_deref().unwrap_or("-")
        )
    }
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

/// A ready-to-use completion client for one endpoint.
pub struct Client {
    endpoint: ModelEndpoint,
    template: PromptTemplate,
    oracle: Option<MockOracle>,
    http: Option<reqwest::blocking::Client>,
    api_key: Option<String>,
    limiter: Option<RateLimiter>,
    cache: Option<TranscriptCache>,
    offline: bool,
    network_calls: AtomicU64,
}

impl Client {
    /// `taxonomy` and `template` are needed by the mock, which answers rendered prompts.
    pub fn new(
        endpoint: ModelEndpoint,
        taxonomy: &EmotionTaxonomy,
        template: PromptTemplate,
        cache: Option<TranscriptCache>,
        offline: bool,
    ) -> Result<Self> {
        let errs = endpoint.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let oracle = match (endpoint.kind, endpoint.mock) {
            (EndpointKind::Mock, Some(m)) => {
                Some(MockOracle::new(m.prior_seed, m.lambda, taxonomy.clone())?)
            }
            _ => None,
        };
        let http = if endpoint.kind.is_http() {
            Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(endpoint.timeout_secs))
                    .build()
                    .map_err(|e| Error::BadResponse {
                        endpoint: endpoint.identity(),
                        message: e.to_string(),
                    })?,
            )
        } else {
            None
        };
        let api_key = match &endpoint.api_key_env {
            Some(var) if endpoint.kind.is_http() && !offline => match std::env::var(var) {
                Ok(k) => Some(k),
                Err(_) => {
                    return Err(Error::Config(vec![format!(
                        "endpoint {}: environment variable {var} is not set",
                        endpoint.name
                    )]))
                }
            },
            _ => None,
        };
        let limiter = endpoint.requests_per_minute.map(RateLimiter::per_minute);
        Ok(Client {
            endpoint,
            template,
            oracle,
            http,
            api_key,
            limiter,
            cache,
            offline,
            network_calls: AtomicU64::new(0),
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn oracle(&self) -> Option<&MockOracle> {
        self.oracle.as_ref()
    }

    /// HTTP requests issued so far (including retries).
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Model identity used in cache keys.
    pub fn cache_model_id(&self) -> String {
        match &self.oracle {
            Some(o) => format!("{}#{}", self.endpoint.model_id, o.fingerprint()),
            None => self.endpoint.model_id.clone(),
        }
    }

    /// Uncached completion.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        self.complete_with_usage(prompt).map(|(c, _)| c)
    }

    fn complete_with_usage(&self, prompt: &str) -> Result<(String, Option<TokenUsage>)> {
        if let Some(o) = &self.oracle {
            return Ok((o.complete_prompt(&self.template, prompt)?, None));
        }
        if self.offline {
            return Err(Error::Offline(cache::completion_key(
                &self.cache_model_id(),
                prompt,
                self.endpoint.params(),
            )));
        }
        let (path, body) = match self.endpoint.kind {
            EndpointKind::HttpChat => (
                "chat/completions",
                json!({
                    "model": self.endpoint.model_id,
                    "messages": [{"role": "user", "content": prompt}],
                    "temperature": self.endpoint.temperature,
                    "max_tokens": self.endpoint.max_output_tokens,
                }),
            ),
            EndpointKind::HttpCompletion => (
                "completions",
                json!({
                    "model": self.endpoint.model_id,
                    "prompt": prompt,
                    "temperature": self.endpoint.temperature,
                    "max_tokens": self.endpoint.max_output_tokens,
                }),
            ),
            EndpointKind::Mock => unreachable!("mock handled above"),
        };
        let v = self.post_json(path, &body)?;
        let text = match self.endpoint.kind {
            EndpointKind::HttpChat => v
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str),
            _ => v.pointer("/choices/0/text").and_then(Value::as_str),
        }
        .ok_or_else(|| Error::BadResponse {
            endpoint: self.endpoint.identity(),
            message: "response has no first choice text".into(),
        })?;
        let usage = v.get("usage").map(|u| TokenUsage {
            prompt_tokens: u.get("prompt_tokens").and_then(Value::as_u64),
            completion_tokens: u.get("completion_tokens").and_then(Value::as_u64),
        });
        Ok((text.to_owned(), usage))
    }

    /// Completion through the cache. Returns the text and whether it was a cache hit.
    pub fn cached_complete(&self, prompt: &str) -> Result<(String, bool)> {
        let Some(cache) = &self.cache else {
            return Ok((self.complete(prompt)?, false));
        };
        let model_id = self.cache_model_id();
        let params = self.endpoint.params();
        let key = cache::completion_key(&model_id, prompt, params);
        let (t, hit) = cache.get_or_insert_with(&key, || {
            let (text, usage) = self.complete_with_usage(prompt)?;
            Ok(Transcript::completion(&model_id, prompt, params, text, usage))
        })?;
        Ok((t.completion, hit))
    }

    /// One vector per text, in order. Cached per text when a cache is configured.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let model = self
            .endpoint
            .embedding_model
            .clone()
            .unwrap_or_else(|| self.cache_model_id());
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let key = cache::embedding_key(&model, t);
            match self.cache.as_ref().and_then(|c| c.get(&key)) {
                Some(tr) => out[i] = Some(serde_json::from_str(&tr.completion)?),
                None => missing.push(i),
            }
        }
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i].as_str()).collect();
            let vectors = if self.oracle.is_some() {
                batch.iter().map(|t| mock_embedding(t)).collect()
            } else if self.offline {
                return Err(Error::Offline(cache::embedding_key(&model, batch[0])));
            } else {
                self.fetch_embeddings(&model, &batch)?
            };
            for (&i, v) in missing.iter().zip(vectors) {
                if let Some(c) = &self.cache {
                    c.put(&Transcript::embedding(&model, &texts[i], &v))?;
                }
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn fetch_embeddings(&self, model: &str, batch: &[&str]) -> Result<Vec<Vec<f64>>> {
        let v = self.post_json("embeddings", &json!({"model": model, "input": batch}))?;
        let bad = |m: &str| Error::BadResponse {
            endpoint: self.endpoint.identity(),
            message: m.into(),
        };
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("embedding response has no data array"))?;
        if data.len() != batch.len() {
            return Err(bad("embedding count does not match input count"));
        }
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, d) in data.iter().enumerate() {
            let idx = d.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let vec: Vec<f64> = serde_json::from_value(
                d.get("embedding").cloned().ok_or_else(|| bad("missing embedding"))?,
            )?;
            rows.push((idx, vec));
        }
        rows.sort_by_key(|(i, _)| *i);
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Value> {
        let http = self.http.as_ref().expect("http client for http endpoint");
        let url = self.endpoint.url(path);
        let policy = self.endpoint.retry;
        let mut last = String::new();
        for attempt in 0..=policy.max_retries {
            if attempt > 0 {
                let d = policy.delay(attempt - 1);
                debug!(attempt, delay_ms = d.as_millis() as u64, "retrying");
                std::thread::sleep(d);
            }
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            match self.try_post(http, &url, body)? {
                Attempt::Done(v) => return Ok(v),
                Attempt::Retry(why) => {
                    warn!(endpoint = %self.endpoint.identity(), %why, "transient failure");
                    last = why;
                }
            }
        }
        Err(Error::RetriesExhausted {
            endpoint: self.endpoint.identity(),
            attempts: policy.max_retries + 1,
            last,
        })
    }

    fn try_post(
        &self,
        http: &reqwest::blocking::Client,
        url: &str,
        body: &Value,
    ) -> Result<Attempt<Value>> {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let mut req = http.post(url).json(body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Attempt::Retry(e.to_string()))
            }
            Err(e) => {
                return Err(Error::BadResponse {
                    endpoint: self.endpoint.identity(),
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status();
        if status.is_success() {
            return match resp.json::<Value>() {
                Ok(v) => Ok(Attempt::Done(v)),
                Err(e) => Err(Error::BadResponse {
                    endpoint: self.endpoint.identity(),
                    message: e.to_string(),
                }),
            };
        }
        let code = status.as_u16();
        if code == 401 || code == 403 {
            return Err(Error::Authentication {
                endpoint: self.endpoint.identity(),
                status: code,
            });
        }
        if code == 429 || status.is_server_error() {
            return Ok(Attempt::Retry(format!("HTTP {code}")));
        }
        let text = resp.text().unwrap_or_default();
        Err(Error::HttpStatus {
            endpoint: self.endpoint.identity(),
            status: code,
            body: text.chars().take(500).collect(),
        })
    }
}

/// Hashed bag-of-words vector, so mock runs can exercise similarity retrieval offline.
pub fn mock_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; MOCK_EMBEDDING_DIM];
    let toks = mock::tokens(text);
    if toks.is_empty() {
        v[0] = 1.0;
        return v;
    }
    for t in toks {
        let h = StableHasher::new("mock-embed").str(&t).finish_u64();
        let slot = (h % MOCK_EMBEDDING_DIM as u64) as usize;
        v[slot] += if (h >> 32) & 1 == 0 { 1.0 } else { -1.0 };
    }
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}
