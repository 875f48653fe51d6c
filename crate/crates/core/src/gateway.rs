//! Chat-completion gateway.
//!
//! [`Gateway`] fronts a [`ChatBackend`]: an OpenAI-compatible HTTP client,
//! a scripted queue for unit tests, or a cassette that replays recorded
//! traffic keyed by [`canonical_digest`].

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 2048;
pub const DEFAULT_CONTEXT_BUDGET: usize = 128_000;
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";
pub const API_KEY_ENV: &str = "SAARTHI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>, temperature: f64) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            messages,
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("no messages".into())),
            Some(m) if m.role == Role::Assistant => Err(GatewayError::InvalidRequest(
                "first message must come from the system or the user".into(),
            )),
            Some(_) if self.max_tokens == 0 => {
                Err(GatewayError::InvalidRequest("max_tokens must be positive".into()))
            }
            Some(_) => Ok(()),
        }
    }

    /// Rough token estimate (four characters per token).
    pub fn estimated_prompt_tokens(&self) -> usize {
        self.messages
            .iter()
            .map(|m| m.content.chars().count().div_ceil(4) + 4)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        ChatResponse {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: Usage::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("context overflow: ~{estimated} tokens exceeds budget of {budget}")]
    ContextOverflow { estimated: usize, budget: usize },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed reply: {0}")]
    Malformed(String),
    #[error("cassette has no entry for request digest {digest}")]
    CacheMiss { digest: String },
    #[error("scripted backend has no responses left")]
    ScriptExhausted,
    #[error("cassette {path}: {message}")]
    Cassette { path: PathBuf, message: String },
}

impl GatewayError {
    /// Whether the HTTP backend would try again after this error.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Cloneable handle used by the pipeline; enforces request validity and the
/// context budget before reaching the backend.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    context_budget: usize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("context_budget", &self.context_budget)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self::from_arc(Arc::new(backend))
    }

    pub fn from_arc(backend: Arc<dyn ChatBackend>) -> Self {
        Gateway {
            backend,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn with_context_budget(mut self, budget: usize) -> Self {
        self.context_budget = budget;
        self
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let estimated = request.estimated_prompt_tokens() + request.max_tokens as usize;
        if estimated > self.context_budget {
            return Err(GatewayError::ContextOverflow {
                estimated,
                budget: self.context_budget,
            });
        }
        self.backend.complete(request)
    }
}

/// SHA-256 over a canonical rendering of the request: keys sorted, message
/// content whitespace-collapsed, temperature in shortest round-trip form.
pub fn canonical_digest(request: &ChatRequest) -> String {
    let messages: Vec<serde_json::Value> = request
        .messages
        .iter()
        .map(|m| {
            serde_json::json!({
                "role": m.role,
                "content": m.content.split_whitespace().collect::<Vec<_>>().join(" "),
            })
        })
        .collect();
    // serde_json::Map is ordered by key, so the rendering is canonical.
    let canonical = serde_json::json!({
        "model": request.model_id,
        "temperature": format!("{:?}", request.temperature),
        "max_tokens": request.max_tokens,
        "messages": messages,
    });
    let bytes = serde_json::to_vec(&canonical).expect("canonical request serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Pops pre-scripted responses in order. Meant for a single consumer.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<Result<ChatResponse, GatewayError>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            queue: Mutex::new(replies.into_iter().map(|r| Ok(ChatResponse::stop(r))).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, reply: Result<ChatResponse, GatewayError>) {
        self.queue.lock().unwrap().push_back(reply);
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    /// Requests seen so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.requests.lock().unwrap().push(request.clone());
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(GatewayError::ScriptExhausted))
    }
}

/// Adapts a closure into a backend; handy for rule-based fakes.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (self.0)(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request_digest: String,
    pub response: ChatResponse,
}

pub fn read_cassette(path: &Path) -> Result<Vec<CassetteEntry>, GatewayError> {
    let text = fs::read_to_string(path).map_err(|e| GatewayError::Cassette {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Cassette {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_cassette(path: &Path, entries: &[CassetteEntry]) -> Result<(), GatewayError> {
    let fail = |message: String| GatewayError::Cassette {
        path: path.to_path_buf(),
        message,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(e.to_string()))?;
    let mut body = serde_json::to_string_pretty(entries).map_err(|e| fail(e.to_string()))?;
    body.push('\n');
    tmp.write_all(body.as_bytes()).map_err(|e| fail(e.to_string()))?;
    tmp.persist(path).map_err(|e| fail(e.to_string()))?;
    Ok(())
}

/// Serves responses from a cassette. Repeated identical requests walk the
/// entries recorded for that digest in order; the last one repeats.
#[derive(Debug)]
pub struct ReplayBackend {
    entries: HashMap<String, Vec<ChatResponse>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn from_entries(entries: Vec<CassetteEntry>) -> Self {
        let mut map: HashMap<String, Vec<ChatResponse>> = HashMap::new();
        for e in entries {
            map.entry(e.request_digest).or_default().push(e.response);
        }
        ReplayBackend {
            entries: map,
            cursors: Mutex::new(HashMap::new()),
        }
    }

    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::from_entries(read_cassette(path)?))
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = canonical_digest(request);
        let responses = self
            .entries
            .get(&digest)
            .ok_or_else(|| GatewayError::CacheMiss {
                digest: digest.clone(),
            })?;
        let mut cursors = self.cursors.lock().unwrap();
        let cursor = cursors.entry(digest).or_insert(0);
        let response = responses[(*cursor).min(responses.len() - 1)].clone();
        *cursor += 1;
        Ok(response)
    }
}

/// Forwards to an inner backend and appends every exchange to a cassette
/// file, rewriting it after each call.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    entries: Mutex<Vec<CassetteEntry>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, path: impl Into<PathBuf>) -> Self {
        RecordingBackend {
            inner,
            path: path.into(),
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<CassetteEntry> {
        self.entries.lock().unwrap().clone()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self.inner.complete(request)?;
        let mut entries = self.entries.lock().unwrap();
        entries.push(CassetteEntry {
            request_digest: canonical_digest(request),
            response: response.clone(),
        });
        write_cassette(&self.path, &entries)?;
        Ok(response)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Sleep before each retry; its length is the retry budget.
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            delays: vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn immediate(retries: usize) -> Self {
        RetryPolicy {
            delays: vec![Duration::ZERO; retries],
        }
    }
}

/// OpenAI-compatible `POST /v1/chat/completions` client.
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(300))
                .build()
                .expect("HTTP client builds"),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads the bearer token from `SAARTHI_API_KEY`.
    pub fn from_env(base_url: Option<&str>) -> Self {
        Self::new(
            base_url.unwrap_or(DEFAULT_BASE_URL),
            std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        )
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let body = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(GatewayError::Auth { status }),
            _ => return Err(GatewayError::Http { status, body: text }),
        }
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| GatewayError::Malformed(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Malformed("no choices in reply".into()))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            Some("stop") | None => FinishReason::Stop,
            Some(_) => FinishReason::Error,
        };
        let content = match (choice.message.content, finish_reason) {
            (Some(c), _) => c,
            (None, FinishReason::Error) => String::new(),
            (None, _) => return Err(GatewayError::Malformed("reply has no content".into())),
        };
        Ok(ChatResponse {
            content,
            finish_reason,
            usage: wire.usage.unwrap_or_default(),
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut attempts = 0u32;
        let mut delays = self.retry.delays.iter();
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retryable() => match delays.next() {
                    Some(delay) => {
                        log::warn!("chat completion attempt {attempts} failed: {e}; retrying");
                        thread::sleep(*delay);
                    }
                    None => {
                        return Err(GatewayError::RetriesExhausted {
                            attempts,
                            last: e.to_string(),
                        })
                    }
                },
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(temperature: f64) -> ChatRequest {
        ChatRequest::new(
            "mock",
            vec![
                ChatMessage::system("You are a formal verification engineer."),
                ChatMessage::user("Write an assertion for: FIFO must not overflow."),
            ],
            temperature,
        )
    }

    #[test]
    fn scripted_queue_order() {
        let gw = Gateway::new(ScriptedBackend::new(["A", "B"]));
        assert_eq!(gw.complete(&request(0.2)).unwrap().content, "A");
        assert_eq!(gw.complete(&request(0.2)).unwrap().content, "B");
        assert!(matches!(
            gw.complete(&request(0.2)),
            Err(GatewayError::ScriptExhausted)
        ));
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        assert_eq!(canonical_digest(&request(0.2)), canonical_digest(&request(0.2)));
        assert_ne!(canonical_digest(&request(0.2)), canonical_digest(&request(0.7)));
        let mut spaced = request(0.2);
        spaced.messages[1].content = "  Write an assertion   for:\nFIFO must not overflow. ".into();
        assert_eq!(canonical_digest(&spaced), canonical_digest(&request(0.2)));
        let mut other = request(0.2);
        other.messages[1].content.push('!');
        assert_ne!(canonical_digest(&other), canonical_digest(&request(0.2)));
    }

    #[test]
    fn digest_golden_value() {
        // Recomputed independently as sha256 of the sorted-key compact JSON
        // {"max_tokens","messages":[{content,role}],"model","temperature":"0.2"}.
        assert_eq!(
            canonical_digest(&request(0.2)),
            "385dd4d0d02e6fb2ea381ff3b14c27132a2bb0bdaf4787b76cf55bf210b75eeb"
        );
    }

    #[test]
    fn replay_miss_names_digest() {
        let gw = Gateway::new(ReplayBackend::from_entries(Vec::new()));
        match gw.complete(&request(0.2)).unwrap_err() {
            GatewayError::CacheMiss { digest } => assert_eq!(digest, canonical_digest(&request(0.2))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_walks_repeated_entries() {
        let d = canonical_digest(&request(0.2));
        let entries = ["x", "y"]
            .iter()
            .map(|c| CassetteEntry {
                request_digest: d.clone(),
                response: ChatResponse::stop(*c),
            })
            .collect();
        let gw = Gateway::new(ReplayBackend::from_entries(entries));
        let got: Vec<String> = (0..3).map(|_| gw.complete(&request(0.2)).unwrap().content).collect();
        assert_eq!(got, ["x", "y", "y"]);
    }

    #[test]
    fn invalid_requests_rejected() {
        let gw = Gateway::new(ScriptedBackend::new(["A"]));
        let mut r = request(0.2);
        r.messages.clear();
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        let r = ChatRequest::new("m", vec![ChatMessage::assistant("hi")], 0.2);
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn context_budget_fails_fast() {
        let backend = Arc::new(ScriptedBackend::new(["A"]));
        let gw = Gateway::from_arc(backend.clone()).with_context_budget(100);
        let err = gw.complete(&request(0.2)).unwrap_err();
        assert!(matches!(err, GatewayError::ContextOverflow { budget: 100, .. }));
        assert!(backend.requests().is_empty());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let rec = RecordingBackend::new(ScriptedBackend::new(["first", "second"]), &path);
        let mut r2 = request(0.2);
        r2.messages[1].content = "another".into();
        rec.complete(&request(0.2)).unwrap();
        rec.complete(&r2).unwrap();
        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.complete(&r2).unwrap().content, "second");
        assert_eq!(replay.complete(&request(0.2)).unwrap().content, "first");
    }

    #[test]
    fn retry_classification() {
        assert!(GatewayError::Http { status: 503, body: String::new() }.is_retryable());
        assert!(GatewayError::Http { status: 429, body: String::new() }.is_retryable());
        assert!(!GatewayError::Http { status: 400, body: String::new() }.is_retryable());
        assert!(!GatewayError::Auth { status: 401 }.is_retryable());
        assert!(GatewayError::Transport("reset".into()).is_retryable());
        assert!(!GatewayError::Malformed("x".into()).is_retryable());
    }
}
