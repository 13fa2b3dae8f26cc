//! Model gateway: the single place where chat completions are requested.
//!
//! Requests are keyed by a SHA-256 over the model name and the ordered
//! messages. A [`TranscriptStore`] keeps `{key, request, response}` records
//! as append-only JSON Lines; in replay mode the store is the only source of
//! responses and the transport is never touched.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_MODEL: &str = "google/gemini-3-flash-preview";
pub const DEFAULT_BASE_URL: &str = "https://openrouter.ai/api/v1";
pub const API_KEY_ENV: &str = "PAGEGUIDE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output: u32,
}

impl ChatRequest {
    pub fn key(&self) -> String {
        request_key(self)
    }
}

/// SHA-256 hex over `model, role, content, role, content, …` joined by 0x1F.
/// Sampling parameters are deliberately not part of the key.
pub fn request_key(request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(request.model.as_bytes());
    for m in &request.messages {
        h.update([0x1f]);
        h.update(m.role.as_str().as_bytes());
        h.update([0x1f]);
        h.update(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseSource {
    Live,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub model: String,
    pub latency_ms: u64,
    pub source: ResponseSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub text: String,
    pub model: String,
    #[serde(default)]
    pub latency_ms: u64,
}

/// One line of a `*.transcript.jsonl` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: StoredResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreMode {
    Record,
    Replay,
    Passthrough,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no recorded response for request {key}")]
    ReplayMiss { key: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("upstream returned {status}: {body}")]
    Upstream { status: u16, body: String },
    #[error("missing credential: set {API_KEY_ENV}")]
    MissingCredential,
    #[error("transcript {path}: {message}")]
    Store { path: PathBuf, message: String },
}

pub struct TranscriptStore {
    mode: StoreMode,
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, TranscriptEntry>>,
    writer: Mutex<Option<File>>,
    recorded: Mutex<Vec<String>>,
}

impl std::fmt::Debug for TranscriptStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TranscriptStore")
            .field("mode", &self.mode)
            .field("path", &self.path)
            .field("entries", &self.len())
            .finish()
    }
}

impl TranscriptStore {
    pub fn in_memory(mode: StoreMode) -> Self {
        TranscriptStore {
            mode,
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            recorded: Mutex::new(Vec::new()),
        }
    }

    /// Opens a transcript file. Replay requires the file to exist; record
    /// creates it on demand.
    pub fn open(path: impl AsRef<Path>, mode: StoreMode) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let store_err = |message: String| GatewayError::Store { path: path.clone(), message };
        let mut entries = HashMap::new();
        match File::open(&path) {
            Ok(file) => {
                for (n, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|e| store_err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: TranscriptEntry = serde_json::from_str(&line)
                        .map_err(|e| store_err(format!("line {}: {e}", n + 1)))?;
                    entries.entry(entry.key.clone()).or_insert(entry);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode != StoreMode::Replay => {}
            Err(e) => return Err(store_err(e.to_string())),
        }
        Ok(TranscriptStore {
            mode,
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
            recorded: Mutex::new(Vec::new()),
        })
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<TranscriptEntry> {
        self.entries.read().expect("store lock").get(key).cloned()
    }

    /// Keys appended by this process, in order.
    pub fn recorded_keys(&self) -> Vec<String> {
        self.recorded.lock().expect("store lock").clone()
    }

    /// Inserts an entry unless its key is already present. Returns whether it
    /// was new. File appends are serialized behind the writer lock.
    pub fn insert(&self, entry: TranscriptEntry) -> Result<bool, GatewayError> {
        let mut entries = self.entries.write().expect("store lock");
        if entries.contains_key(&entry.key) {
            return Ok(false);
        }
        if let Some(path) = &self.path {
            let store_err = |e: std::io::Error| GatewayError::Store { path: path.clone(), message: e.to_string() };
            let mut writer = self.writer.lock().expect("writer lock");
            if writer.is_none() {
                *writer = Some(OpenOptions::new().create(true).append(true).open(path).map_err(store_err)?);
            }
            let line = serde_json::to_string(&entry).expect("entry serializes");
            let file = writer.as_mut().expect("writer opened");
            writeln!(file, "{line}").map_err(store_err)?;
            file.flush().map_err(store_err)?;
        }
        self.recorded.lock().expect("store lock").push(entry.key.clone());
        entries.insert(entry.key.clone(), entry);
        Ok(true)
    }

    /// Stores `text` as the response to `request`.
    pub fn seed(&self, request: &ChatRequest, text: impl Into<String>) -> Result<bool, GatewayError> {
        self.insert(TranscriptEntry {
            key: request.key(),
            request: request.clone(),
            response: StoredResponse { text: text.into(), model: request.model.clone(), latency_ms: 0 },
        })
    }

    /// SHA-256 of the transcript file, for report provenance.
    pub fn file_digest(&self) -> Option<String> {
        let bytes = std::fs::read(self.path.as_ref()?).ok()?;
        Some(hex::encode(Sha256::digest(&bytes)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("{0}")]
    Network(String),
    #[error("status {status}: {body}")]
    Upstream { status: u16, body: String },
}

/// Something that can execute a chat request against a live model.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest, timeout: Duration) -> Result<String, TransportError>;
}

/// OpenAI-style `POST {base_url}/chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub base_url: String,
    api_key: String,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        HttpTransport { base_url: base_url.into(), api_key: api_key.into() }
    }

    pub fn from_env(base_url: impl Into<String>) -> Result<Self, GatewayError> {
        match std::env::var(API_KEY_ENV) {
            Ok(k) if !k.trim().is_empty() => Ok(Self::new(base_url, k)),
            _ => Err(GatewayError::MissingCredential),
        }
    }
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

/// Extracts the first choice's message content from a chat-completions body.
pub fn parse_completion_body(body: &str) -> Result<String, TransportError> {
    let parsed: WireResponse =
        serde_json::from_str(body).map_err(|e| TransportError::Network(format!("bad response body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::Network("response has no message content".into()))
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest, timeout: Duration) -> Result<String, TransportError> {
        // Built per call: a blocking client must not be created or dropped on an async worker.
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_output,
        };
        let resp = client
            .post(url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportError::Network(e.to_string()))?;
        if !status.is_success() {
            let body: String = text.chars().take(500).collect();
            return Err(TransportError::Upstream { status: status.as_u16(), body });
        }
        parse_completion_body(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub model: String,
    pub temperature: f64,
    pub max_output: u32,
    pub timeout: Duration,
    /// Sleeps before each retry; its length is the retry count.
    pub backoff: Vec<Duration>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output: 2048,
            timeout: Duration::from_secs(60),
            backoff: vec![Duration::from_secs(1), Duration::from_secs(4)],
        }
    }
}

#[derive(Clone)]
pub struct Gateway {
    store: Arc<TranscriptStore>,
    transport: Option<Arc<dyn Transport>>,
    config: GatewayConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("store", &self.store)
            .field("live", &self.transport.is_some())
            .field("config", &self.config)
            .finish()
    }
}

impl Gateway {
    pub fn new(store: Arc<TranscriptStore>, transport: Option<Arc<dyn Transport>>, config: GatewayConfig) -> Self {
        Gateway { store, transport, config }
    }

    /// A replay-only gateway over an existing store.
    pub fn replay(store: Arc<TranscriptStore>) -> Self {
        Gateway { store, transport: None, config: GatewayConfig::default() }
    }

    pub fn with_config(mut self, config: GatewayConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<TranscriptStore> {
        &self.store
    }

    /// Builds a request for the configured model and sampling settings.
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: self.config.temperature,
            max_output: self.config.max_output,
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = request.key();
        let from_store = |e: TranscriptEntry| ChatResponse {
            text: e.response.text,
            model: e.response.model,
            latency_ms: e.response.latency_ms,
            source: ResponseSource::Replay,
        };
        match self.store.mode() {
            StoreMode::Replay => {
                tracing::debug!(%key, "replay lookup");
                self.store.get(&key).map(from_store).ok_or(GatewayError::ReplayMiss { key })
            }
            StoreMode::Record => {
                if let Some(e) = self.store.get(&key) {
                    return Ok(from_store(e));
                }
                let resp = self.live(request)?;
                self.store.insert(TranscriptEntry {
                    key,
                    request: request.clone(),
                    response: StoredResponse {
                        text: resp.text.clone(),
                        model: resp.model.clone(),
                        latency_ms: resp.latency_ms,
                    },
                })?;
                Ok(resp)
            }
            StoreMode::Passthrough => self.live(request),
        }
    }

    fn live(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let transport = self.transport.as_ref().ok_or(GatewayError::MissingCredential)?;
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match transport.send(request, self.config.timeout) {
                Ok(text) => {
                    return Ok(ChatResponse {
                        text,
                        model: request.model.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        source: ResponseSource::Live,
                    })
                }
                Err(TransportError::Upstream { status, body }) => {
                    return Err(GatewayError::Upstream { status, body })
                }
                Err(TransportError::Network(msg)) => {
                    let Some(wait) = self.config.backoff.get(attempt) else {
                        return Err(GatewayError::Transport(msg));
                    };
                    tracing::warn!(attempt, error = %msg, "model call failed, retrying");
                    std::thread::sleep(*wait);
                    attempt += 1;
                }
            }
        }
    }
}

/// A transport that answers from a closure; used for fixture authoring and tests.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn send(&self, request: &ChatRequest, _timeout: Duration) -> Result<String, TransportError> {
        (self.0)(request)
    }
}
