//! Chat-completion providers.
//!
//! [`HttpProvider`] speaks the OpenAI-compatible `POST {base}/chat/completions`
//! protocol and retries transient transport failures. [`MockProvider`] replays
//! a script and records every request, for tests and offline use.
//! [`SyntheticProvider`] fabricates schema-conforming replies from a hash of
//! the request so whole pipelines can run without a model.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{sha256_hex, CodingSchema, FieldSpec, FieldType};

pub const DEFAULT_KEY_ENV: &str = "SANDPIPER_GATEWAY_KEY";

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
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
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
    pub fn new(
        model_id: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, GatewayError> {
        let req = Self { model_id: model_id.into(), messages, temperature, max_tokens };
        req.check()?;
        Ok(req)
    }

    fn check(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("messages must be non-empty".into())),
            Some(m) if m.role != Role::System => {
                Err(GatewayError::InvalidRequest("first message must have role system".into()))
            }
            Some(_) => Ok(()),
        }
    }

    /// Stable digest of the request, recorded in attempt transcripts.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("request serializes"))
    }

    fn wire_body(&self) -> Value {
        json!({
            "model": self.model_id,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("model `{0}` is not in the gateway allowlist")]
    ModelNotAllowed(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    TransportFailure { attempts: u32, message: String },
    #[error("gateway rejected the credentials (HTTP {0})")]
    AuthFailure(u16),
    #[error("gateway rejected the request (HTTP {status}): {message}")]
    RequestRejected { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    MalformedProviderResponse(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::ModelNotAllowed(_) => "model_not_allowed",
            GatewayError::TransportFailure { .. } => "transport_failure",
            GatewayError::AuthFailure(_) => "auth_failure",
            GatewayError::RequestRejected { .. } => "request_rejected",
            GatewayError::MalformedProviderResponse(_) => "malformed_provider_response",
            GatewayError::InvalidRequest(_) => "invalid_request",
        }
    }

    /// Errors that will recur for every item of a run.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            GatewayError::ModelNotAllowed(_) | GatewayError::AuthFailure(_) | GatewayError::InvalidRequest(_)
        )
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError>;

    /// Mock providers never leave the process, so the privacy guard lets
    /// them see raw sessions.
    fn is_mock(&self) -> bool {
        false
    }

    fn models(&self) -> Vec<String>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        (**self).complete(req)
    }

    fn is_mock(&self) -> bool {
        (**self).is_mock()
    }

    fn models(&self) -> Vec<String> {
        (**self).models()
    }
}

// ---------------------------------------------------------------------------
// HTTP provider
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub models: Vec<String>,
    pub max_transport_retries: u32,
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:4000/v1".into(),
            api_key_env: DEFAULT_KEY_ENV.into(),
            timeout_ms: 60_000,
            models: Vec::new(),
            max_transport_retries: 2,
            backoff_ms: 250,
        }
    }
}

/// An API key. Never printed.
#[derive(Clone)]
struct Secret(String);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

#[derive(Debug)]
pub struct HttpProvider {
    cfg: ProviderConfig,
    key: Option<Secret>,
    agent: ureq::Agent,
}

enum Attempt {
    Done(ChatReply),
    Retry(String),
    Fail(GatewayError),
}

impl HttpProvider {
    /// Reads the key from the environment variable named in `cfg`. A missing
    /// variable means requests go out without an `Authorization` header.
    pub fn new(cfg: ProviderConfig) -> Self {
        let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()).map(Secret);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, key, agent }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn scrub(&self, message: String) -> String {
        match &self.key {
            Some(Secret(k)) => message.replace(k.as_str(), "<redacted>"),
            None => message,
        }
    }

    fn attempt(&self, url: &str, body: &str) -> Attempt {
        let started = Instant::now();
        let mut request = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(Secret(k)) = &self.key {
            request = request.header("Authorization", format!("Bearer {k}"));
        }
        let mut response = match request.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(self.scrub(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(self.scrub(format!("reading body: {e}"))),
        };
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Fail(GatewayError::AuthFailure(status)),
            429 | 500..=599 => return Attempt::Retry(format!("HTTP {status}")),
            _ => {
                let snippet: String = text.chars().take(200).collect();
                return Attempt::Fail(GatewayError::RequestRejected { status, message: self.scrub(snippet) });
            }
        }
        match parse_completion(&text) {
            Ok((content, token_usage)) => Attempt::Done(ChatReply {
                content,
                token_usage,
                latency_ms: started.elapsed().as_millis() as u64,
            }),
            Err(m) => Attempt::Fail(GatewayError::MalformedProviderResponse(self.scrub(m))),
        }
    }
}

fn parse_completion(body: &str) -> Result<(String, TokenUsage), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("body is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("missing choices[0].message.content")?
        .to_owned();
    let usage = TokenUsage {
        prompt: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
        completion: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
    };
    Ok((content, usage))
}

impl ChatProvider for HttpProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        if !self.cfg.models.iter().any(|m| m == &req.model_id) {
            return Err(GatewayError::ModelNotAllowed(req.model_id.clone()));
        }
        req.check()?;
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = req.wire_body().to_string();
        let attempts = 1 + self.cfg.max_transport_retries;
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms.saturating_mul(1 << (n - 1))));
            }
            match self.attempt(&url, &body) {
                Attempt::Done(reply) => return Ok(reply),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(m) => {
                    log::warn!("gateway attempt {} of {attempts} failed: {m}", n + 1);
                    last = m;
                }
            }
        }
        Err(GatewayError::TransportFailure { attempts, message: last })
    }

    fn models(&self) -> Vec<String> {
        self.cfg.models.clone()
    }
}

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Content(String),
    /// Simulates a transport failure that survived the transport retries.
    TransportFailure,
}

impl From<&str> for MockReply {
    fn from(s: &str) -> Self {
        MockReply::Content(s.to_owned())
    }
}

impl From<String> for MockReply {
    fn from(s: String) -> Self {
        MockReply::Content(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cursor {
    /// One global cursor across all calls.
    Global,
    /// The entry index is the number of assistant turns in the request, so
    /// every conversation replays the script from the start.
    PerConversation,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("mock script must be non-empty")]
pub struct EmptyScript;

#[derive(Debug)]
pub struct MockProvider {
    script: Vec<MockReply>,
    routes: Vec<(String, Vec<MockReply>)>,
    cursor: Cursor,
    next: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
    models: Vec<String>,
}

/// Text of the focal line (marked `>> `) in the first user message, or the
/// whole first user message.
pub fn focal_text(req: &ChatRequest) -> &str {
    let Some(user) = req.messages.iter().find(|m| m.role == Role::User) else {
        return "";
    };
    user.content.lines().find_map(|l| l.strip_prefix(">> ")).unwrap_or(&user.content)
}

impl MockProvider {
    pub fn new<R: Into<MockReply>>(script: impl IntoIterator<Item = R>) -> Result<Self, EmptyScript> {
        let script: Vec<MockReply> = script.into_iter().map(Into::into).collect();
        if script.is_empty() {
            return Err(EmptyScript);
        }
        Ok(Self {
            script,
            routes: Vec::new(),
            cursor: Cursor::Global,
            next: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
            models: vec!["mock".into()],
        })
    }

    pub fn per_conversation(mut self) -> Self {
        self.cursor = Cursor::PerConversation;
        self
    }

    /// Requests whose focal text contains `needle` use `script` instead,
    /// replayed per conversation.
    pub fn route<R: Into<MockReply>>(
        mut self,
        needle: impl Into<String>,
        script: impl IntoIterator<Item = R>,
    ) -> Result<Self, EmptyScript> {
        let script: Vec<MockReply> = script.into_iter().map(Into::into).collect();
        if script.is_empty() {
            return Err(EmptyScript);
        }
        self.routes.push((needle.into(), script));
        Ok(self)
    }

    pub fn with_models<S: Into<String>>(mut self, models: impl IntoIterator<Item = S>) -> Self {
        self.models = models.into_iter().map(Into::into).collect();
        self
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("mock log").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("mock log").len()
    }

    fn pick(script: &[MockReply], i: usize) -> &MockReply {
        &script[i.min(script.len() - 1)]
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        self.log.lock().expect("mock log").push(req.clone());
        req.check()?;
        let turns = req.messages.iter().filter(|m| m.role == Role::Assistant).count();
        let focal = focal_text(req);
        let entry = match self.routes.iter().find(|(needle, _)| focal.contains(needle.as_str())) {
            Some((_, script)) => Self::pick(script, turns),
            None => match self.cursor {
                Cursor::Global => Self::pick(&self.script, self.next.fetch_add(1, Ordering::SeqCst)),
                Cursor::PerConversation => Self::pick(&self.script, turns),
            },
        };
        match entry {
            MockReply::Content(c) => Ok(ChatReply { content: c.clone(), token_usage: TokenUsage::default(), latency_ms: 0 }),
            MockReply::TransportFailure => {
                Err(GatewayError::TransportFailure { attempts: 1, message: "scripted failure".into() })
            }
        }
    }

    fn is_mock(&self) -> bool {
        true
    }

    fn models(&self) -> Vec<String> {
        self.models.clone()
    }
}

// ---------------------------------------------------------------------------
// Synthetic provider
// ---------------------------------------------------------------------------

/// Marker the orchestrator puts in session-granularity system prompts.
pub const SESSION_REPLY_MARKER: &str = "{\"annotations\": [";

/// Offline stand-in for a model: answers every request with a document
/// that conforms to `schema`, chosen by hashing the model id and the focal
/// text. Different model ids therefore disagree on some items.
#[derive(Debug)]
pub struct SyntheticProvider {
    schema: CodingSchema,
    models: Vec<String>,
    calls: AtomicUsize,
}

impl SyntheticProvider {
    pub fn new<S: Into<String>>(schema: CodingSchema, models: impl IntoIterator<Item = S>) -> Self {
        Self { schema, models: models.into_iter().map(Into::into).collect(), calls: AtomicUsize::new(0) }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn document(model_id: &str, text: &str, schema: &CodingSchema) -> Value {
        let mut map = Map::new();
        for f in &schema.fields {
            let h = Sha256::new().chain_update(model_id).chain_update([0]).chain_update(text).chain_update([0]).chain_update(&f.name).finalize();
            map.insert(f.name.clone(), synth_value(f, &h));
        }
        Value::Object(map)
    }
}

fn synth_value(f: &FieldSpec, h: &[u8]) -> Value {
    let x = u64::from_le_bytes(h[0..8].try_into().expect("8 bytes"));
    match &f.kind {
        FieldType::String => Value::String(format!("note-{}", hex::encode(&h[8..11]))),
        FieldType::Boolean => Value::Bool(x % 2 == 0),
        FieldType::Enum { values } => Value::String(values[(x % values.len() as u64) as usize].clone()),
        FieldType::Number { min, max } => {
            let frac = (x % 1001) as f64 / 1000.0;
            let v = match (min, max) {
                (Some(a), Some(b)) => a + frac * (b - a),
                (Some(a), None) => a + frac * 10.0,
                (None, Some(b)) => b - frac * 10.0,
                (None, None) => frac,
            };
            let clamped = v.clamp(min.unwrap_or(f64::MIN), max.unwrap_or(f64::MAX));
            serde_json::Number::from_f64(clamped).map(Value::Number).unwrap_or(json!(0))
        }
        FieldType::Array { element } => Value::Array(vec![synth_value(element, &h[8..])]),
    }
}

impl ChatProvider for SyntheticProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatReply, GatewayError> {
        req.check()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let system = &req.messages[0].content;
        let schema = &self.schema;
        let doc = if system.contains(SESSION_REPLY_MARKER) {
            let user = req.messages.iter().find(|m| m.role == Role::User).map(|m| m.content.as_str()).unwrap_or("");
            let items: Vec<Value> = user
                .lines()
                .filter_map(|l| {
                    let rest = l.strip_prefix('[')?;
                    let (idx, text) = rest.split_once("] ")?;
                    let index: usize = idx.parse().ok()?;
                    let mut doc = Self::document(&req.model_id, text, schema);
                    doc.as_object_mut().expect("object").insert("index".into(), json!(index));
                    Some(doc)
                })
                .collect();
            json!({ "annotations": items })
        } else {
            Self::document(&req.model_id, focal_text(req), schema)
        };
        Ok(ChatReply { content: doc.to_string(), token_usage: TokenUsage::default(), latency_ms: 0 })
    }

    fn is_mock(&self) -> bool {
        true
    }

    fn models(&self) -> Vec<String> {
        self.models.clone()
    }
}
