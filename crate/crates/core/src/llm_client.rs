//! Chat-completion client with retries, a shared rate limit and a
//! content-addressed response cache that makes every pipeline replayable
//! offline.
//!
//! Cache layout: `<cache_dir>/<first two hex chars>/<key>.json`, where the
//! key is the SHA-256 of the canonical request (model, messages, sampling
//! parameters).

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("replay-only mode: missing fixture for cache key {key}")]
    MissingFixture { key: String },
    #[error("API key environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("request failed after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("{msg}; raw response: {raw:?}")]
    Format { msg: String, raw: String },
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid client configuration: {0}")]
    Config(String),
}

type Result<T> = std::result::Result<T, LlmError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the key; empty for
    /// endpoints that need no authentication.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_tokens: 512,
            timeout: Duration::from_secs(60),
        }
    }

    fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientOptions {
    pub requests_per_second: Option<f64>,
    pub max_attempts: u32,
    pub retry_base: Duration,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    pub replay_only: bool,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            requests_per_second: None,
            max_attempts: 5,
            retry_base: Duration::from_secs(1),
            max_in_flight: 4,
            cache_dir: None,
            replay_only: false,
        }
    }
}

/// Endpoint plus client behaviour, as read from a key-value config.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub endpoint: ModelEndpoint,
    pub options: ClientOptions,
}

impl ClientConfig {
    /// Recognised keys: `base_url`, `model`, `api_key_env`, `temperature`,
    /// `max_tokens`, `timeout_secs`, `rps`, `max_attempts`, `retry_base_ms`,
    /// `jobs`, `cache_dir`, `replay_only`. Unrelated keys are ignored.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn num<T: std::str::FromStr>(
            kv: &BTreeMap<String, String>,
            key: &str,
        ) -> Result<Option<T>> {
            kv.get(key)
                .map(|v| {
                    v.parse()
                        .map_err(|_| LlmError::Config(format!("`{key}` has invalid value `{v}`")))
                })
                .transpose()
        }
        let base_url = kv.get("base_url").cloned().unwrap_or_default();
        let model = kv.get("model").cloned().unwrap_or_default();
        let mut endpoint = ModelEndpoint::new(base_url, model);
        if let Some(env) = kv.get("api_key_env") {
            endpoint.api_key_env = env.clone();
        }
        if let Some(t) = num::<f64>(kv, "temperature")? {
            if t < 0.0 {
                return Err(LlmError::Config("temperature must be >= 0".into()));
            }
            endpoint.temperature = t;
        }
        if let Some(m) = num(kv, "max_tokens")? {
            endpoint.max_tokens = m;
        }
        if let Some(s) = num::<f64>(kv, "timeout_secs")? {
            endpoint.timeout = Duration::from_secs_f64(s);
        }
        let mut options = ClientOptions::default();
        if let Some(rps) = num::<f64>(kv, "rps")? {
            options.requests_per_second = (rps > 0.0).then_some(rps);
        }
        if let Some(a) = num::<u32>(kv, "max_attempts")? {
            options.max_attempts = a.max(1);
        }
        if let Some(ms) = num::<u64>(kv, "retry_base_ms")? {
            options.retry_base = Duration::from_millis(ms);
        }
        if let Some(j) = num::<usize>(kv, "jobs")? {
            options.max_in_flight = j.max(1);
        }
        options.cache_dir = kv.get("cache_dir").map(PathBuf::from);
        if let Some(r) = kv.get("replay_only") {
            options.replay_only = matches!(r.as_str(), "true" | "1" | "yes");
        }
        if endpoint.base_url.is_empty() && !options.replay_only {
            return Err(LlmError::Config("`base_url` is required".into()));
        }
        if endpoint.model_name.is_empty() {
            return Err(LlmError::Config("`model` is required".into()));
        }
        Ok(Self { endpoint, options })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn user(endpoint: &ModelEndpoint, prompt: &str) -> Self {
        Self {
            model: endpoint.model_name.clone(),
            messages: vec![Message {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature: endpoint.temperature,
            max_tokens: endpoint.max_tokens,
        }
    }

    /// Content address of this request.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Status { code: u16, body: String },
    Network(String),
    Decode(String),
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
            TransportError::Decode(_) => false,
        }
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Network(e) => write!(f, "network error: {e}"),
            TransportError::Decode(e) => write!(f, "invalid response body: {e}"),
        }
    }
}

/// One wire round trip, no retries or caching.
pub trait Transport: Send + Sync {
    fn send(
        &self,
        endpoint: &ModelEndpoint,
        api_key: Option<&str>,
        request: &ChatRequest,
    ) -> std::result::Result<ChatResponse, TransportError>;
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Parses a chat-completion response body.
pub fn decode_response(body: &str) -> std::result::Result<ChatResponse, TransportError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| TransportError::Decode(e.to_string()))?;
    let text = wire
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::Decode("response has no message content".into()))?;
    Ok(ChatResponse {
        text,
        usage: wire.usage,
    })
}

/// HTTP transport speaking the chat-completion JSON dialect.
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn send(
        &self,
        endpoint: &ModelEndpoint,
        api_key: Option<&str>,
        request: &ChatRequest,
    ) -> std::result::Result<ChatResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = serde_json::to_string(request).expect("request serializes");
        let mut req = agent
            .post(&endpoint.completions_url())
            .header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.as_str())
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        decode_response(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_name: String,
    pub prompt: String,
    pub response_text: String,
    pub timestamp: u64,
    #[serde(default)]
    pub token_usage: Option<TokenUsage>,
}

/// Directory of JSON files addressed by request hash.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<CacheEntry>> {
        let path = self.path_for(key);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(LlmError::Cache { path, source }),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| LlmError::Cache {
                path,
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })
    }

    /// Writes to a temporary file in the target directory, then renames.
    pub fn store(&self, entry: &CacheEntry) -> Result<()> {
        let path = self.path_for(&entry.key);
        let parent = path.parent().expect("cache path has a parent");
        let io_err = |source| LlmError::Cache {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(parent).map_err(io_err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io_err)?;
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        tmp.write_all(&body).map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(())
    }
}

/// Spaces request starts at least `1 / rps` apart across all callers.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / requests_per_second),
            next: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn enter(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight counter poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight counter poisoned");
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("in-flight counter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// What the quiz and reranking code needs from a model.
pub trait ChatModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// Cached, rate-limited, retrying chat-completion client. Cheap to share
/// across threads behind a reference.
pub struct LlmClient {
    endpoint: ModelEndpoint,
    options: ClientOptions,
    cache: Option<ResponseCache>,
    limiter: Option<Arc<RateLimiter>>,
    in_flight: InFlight,
    transport: Box<dyn Transport>,
    sent: AtomicU64,
}

impl LlmClient {
    pub fn new(config: ClientConfig) -> Self {
        Self::with_transport(config, Box::new(HttpTransport))
    }

    pub fn with_transport(config: ClientConfig, transport: Box<dyn Transport>) -> Self {
        let ClientConfig { endpoint, options } = config;
        Self {
            cache: options.cache_dir.clone().map(ResponseCache::new),
            limiter: options
                .requests_per_second
                .map(|rps| Arc::new(RateLimiter::new(rps))),
            in_flight: InFlight {
                limit: options.max_in_flight.max(1),
                active: Mutex::new(0),
                freed: Condvar::new(),
            },
            endpoint,
            options,
            transport,
            sent: AtomicU64::new(0),
        }
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// Outbound requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.options.retry_base.as_secs_f64() * 2f64.powi(attempt as i32 - 1);
        let jitter = rand::rng().random_range(0.5..1.5);
        Duration::from_secs_f64(base * jitter)
    }

    fn fetch(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let api_key = if self.endpoint.api_key_env.is_empty() {
            None
        } else {
            Some(
                std::env::var(&self.endpoint.api_key_env)
                    .map_err(|_| LlmError::MissingApiKey(self.endpoint.api_key_env.clone()))?,
            )
        };
        let _slot = self.in_flight.enter();
        let max_attempts = self.options.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            self.sent.fetch_add(1, Ordering::Relaxed);
            match self
                .transport
                .send(&self.endpoint, api_key.as_deref(), request)
            {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_transient() && attempt < max_attempts => {
                    let wait = self.backoff(attempt);
                    log::warn!("attempt {attempt} failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(e) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        detail: e.to_string(),
                    })
                }
            }
        }
    }
}

impl ChatModel for LlmClient {
    fn model_id(&self) -> &str {
        &self.endpoint.model_name
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let request = ChatRequest::user(&self.endpoint, prompt);
        let key = request.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.load(&key)? {
                return Ok(hit.response_text);
            }
        }
        if self.options.replay_only {
            return Err(LlmError::MissingFixture { key });
        }
        let resp = self.fetch(&request)?;
        if let Some(cache) = &self.cache {
            cache.store(&CacheEntry {
                key,
                model_name: self.endpoint.model_name.clone(),
                prompt: prompt.to_string(),
                response_text: resp.text.clone(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
                token_usage: resp.usage,
            })?;
        }
        Ok(resp.text)
    }
}

pub fn paraphrase_prompt(passage: &str, k: usize, attempt: u32) -> String {
    let mut prompt = format!(
        "Rewrite the passage below in {k} different ways.\n\
         Every rewrite must convey exactly the same information as the passage: \
         do not add facts, do not remove facts, and do not copy the passage verbatim. \
         Change wording and sentence structure while keeping the meaning identical.\n\
         Answer with a numbered list (1. ... {k}. ...) and nothing else.\n"
    );
    if attempt > 0 {
        prompt.push_str(&format!(
            "Attempt {}: make each rewrite clearly different from the passage and from the others.\n",
            attempt + 1
        ));
    }
    prompt.push_str("\nPassage:\n");
    prompt.push_str(passage);
    prompt
}

/// Splits a numbered-list response (`1.`, `2)`, `(3)`). Lines without a
/// number continue the current item.
pub fn split_numbered(raw: &str) -> Vec<String> {
    let marker = Regex::new(r"^\s*(?:\(?\d+[.):]|\*\*\d+[.):]?\*\*)\s*").expect("valid regex");
    let mut items: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in raw.lines() {
        if let Some(m) = marker.find(line) {
            if let Some(done) = current.take() {
                items.push(done);
            }
            current = Some(line[m.end()..].trim().to_string());
        } else if let Some(cur) = current.as_mut() {
            let extra = line.trim();
            if !extra.is_empty() {
                if !cur.is_empty() {
                    cur.push(' ');
                }
                cur.push_str(extra);
            }
        }
    }
    items.extend(current);
    items.retain(|s| !s.is_empty());
    items
}

/// Asks for `k` meaning-preserving rewrites. Returns at most `k`.
pub fn paraphrase_attempt(
    model: &dyn ChatModel,
    passage: &str,
    k: usize,
    attempt: u32,
) -> Result<Vec<String>> {
    if passage.trim().is_empty() {
        return Err(LlmError::Format {
            msg: "cannot paraphrase an empty passage".into(),
            raw: String::new(),
        });
    }
    let raw = model.complete(&paraphrase_prompt(passage, k, attempt))?;
    let mut items = split_numbered(&raw);
    if items.is_empty() {
        return Err(LlmError::Format {
            msg: "no numbered paraphrases found".into(),
            raw,
        });
    }
    items.truncate(k);
    Ok(items)
}

pub fn paraphrase(model: &dyn ChatModel, passage: &str, k: usize) -> Result<Vec<String>> {
    paraphrase_attempt(model, passage, k, 0)
}
