//! Access to a hosted chat-completion model with deterministic
//! record/replay.
//!
//! Every request is rendered from a [`prompts::StageTemplate`] and keyed by
//! its [`ChatRequest::fingerprint`]. In [`Mode::Replay`] responses come from
//! the [`TranscriptStore`] only and no transport is ever touched; in
//! [`Mode::Record`] every live response is persisted under its fingerprint.

pub mod json;
pub mod prompts;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use json::{parse_json_payload, JsonPayloadError};
pub use prompts::{render_prompt, ChatRequest, Message, PromptLibrary, Role, Stage, TemplateError, TemplateVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode `{other}` (expected live, record or replay)")),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Protocol(String),
}

impl TransportError {
    /// 5xx, 429 and connection failures are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
            TransportError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("fixture missing for {stage} request {fingerprint}")]
    FixtureMissing { stage: Stage, fingerprint: String },
    #[error("no chat transport configured for live requests")]
    NotConfigured,
    #[error("non-retryable transport failure: {0}")]
    Rejected(TransportError),
    #[error("transport failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: TransportError },
    #[error("transcript store {path}: {message}")]
    Store { path: PathBuf, message: String },
}

impl LlmError {
    pub fn is_transport(&self) -> bool {
        matches!(self, LlmError::Rejected(_) | LlmError::Exhausted { .. } | LlmError::NotConfigured)
    }
}

/// Sends one rendered request and returns the assistant text.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// OpenAI-compatible `chat/completions` client.
pub struct HttpChatTransport {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChatTransport {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { agent, endpoint: endpoint.into(), model: model.into(), api_key }
    }
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    messages: Vec<Message>,
    temperature: f64,
}

impl ChatTransport for HttpChatTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::to_string(&CompletionBody {
            model: &self.model,
            messages: request.messages(),
            temperature: request.temperature,
        })
        .expect("request body serializes");
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| TransportError::Network(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| TransportError::Protocol(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::Protocol("missing choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Transcript {
    fingerprint: String,
    stage: Stage,
    raw_text: String,
}

/// Fingerprint-addressed transcripts, either on disk (one JSON file per
/// fingerprint) or in memory.
pub struct TranscriptStore {
    mode: Mode,
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, String>>,
    write_lock: Mutex<()>,
}

impl TranscriptStore {
    pub fn on_disk(dir: impl Into<PathBuf>, mode: Mode) -> Self {
        Self { mode, dir: Some(dir.into()), memory: RwLock::new(HashMap::new()), write_lock: Mutex::new(()) }
    }

    pub fn in_memory(mode: Mode) -> Self {
        Self { mode, dir: None, memory: RwLock::new(HashMap::new()), write_lock: Mutex::new(()) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, fingerprint: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{fingerprint}.json")))
    }

    pub fn get(&self, fingerprint: &str) -> Result<Option<String>, LlmError> {
        if let Some(text) = self.memory.read().expect("store lock").get(fingerprint) {
            return Ok(Some(text.clone()));
        }
        let Some(path) = self.path_for(fingerprint) else {
            return Ok(None);
        };
        if !path.exists() {
            return Ok(None);
        }
        let store_err = |message: String| LlmError::Store { path: path.clone(), message };
        let text = fs::read_to_string(&path).map_err(|e| store_err(e.to_string()))?;
        let t: Transcript = serde_json::from_str(&text).map_err(|e| store_err(e.to_string()))?;
        self.memory.write().expect("store lock").insert(fingerprint.to_string(), t.raw_text.clone());
        Ok(Some(t.raw_text))
    }

    pub fn put(&self, stage: Stage, fingerprint: &str, raw_text: &str) -> Result<(), LlmError> {
        let _guard = self.write_lock.lock().expect("store write lock");
        if let Some(path) = self.path_for(fingerprint) {
            let t = Transcript { fingerprint: fingerprint.to_string(), stage, raw_text: raw_text.to_string() };
            let body = serde_json::to_string_pretty(&t).expect("transcript serializes");
            write_atomic(&path, body.as_bytes()).map_err(|e| LlmError::Store { path, message: e.to_string() })?;
        }
        self.memory.write().expect("store lock").insert(fingerprint.to_string(), raw_text.to_string());
        Ok(())
    }

    /// Fingerprints currently on disk or in memory.
    pub fn len(&self) -> usize {
        match &self.dir {
            Some(d) => fs::read_dir(d)
                .map(|rd| {
                    rd.filter_map(Result::ok).filter(|e| e.path().extension().is_some_and(|x| x == "json")).count()
                })
                .unwrap_or(0),
            None => self.memory.read().expect("store lock").len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Write to a sibling temp file, then rename over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportMeta {
    pub latency: Duration,
    pub retries: u32,
    pub from_fixture: bool,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub raw_text: String,
    pub parsed: Option<Value>,
    pub meta: TransportMeta,
}

impl ChatResponse {
    fn new(raw_text: String, meta: TransportMeta) -> Self {
        let parsed = parse_json_payload(&raw_text).ok();
        Self { raw_text, parsed, meta }
    }
}

pub struct LlmGateway {
    prompts: PromptLibrary,
    store: TranscriptStore,
    transport: Option<Arc<dyn ChatTransport>>,
    retry: RetryPolicy,
}

impl LlmGateway {
    pub fn new(prompts: PromptLibrary, store: TranscriptStore, transport: Option<Arc<dyn ChatTransport>>) -> Self {
        Self { prompts, store, transport, retry: RetryPolicy::default() }
    }

    /// Replay-only gateway over an existing store.
    pub fn replay(store: TranscriptStore) -> Self {
        Self::new(PromptLibrary::builtin(), store, None)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> Mode {
        self.store.mode()
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    pub fn prompts(&self) -> &PromptLibrary {
        &self.prompts
    }

    pub fn render(&self, stage: Stage, vars: &TemplateVars) -> Result<ChatRequest, TemplateError> {
        self.prompts.render(stage, vars)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let fingerprint = request.fingerprint();
        let started = Instant::now();
        if self.store.mode() == Mode::Replay {
            let raw =
                self.store.get(&fingerprint)?.ok_or(LlmError::FixtureMissing { stage: request.stage, fingerprint })?;
            return Ok(ChatResponse::new(
                raw,
                TransportMeta { latency: started.elapsed(), retries: 0, from_fixture: true },
            ));
        }
        let transport = self.transport.as_ref().ok_or(LlmError::NotConfigured)?;
        let mut attempt = 0;
        let raw = loop {
            match transport.send(request) {
                Ok(text) => break text,
                Err(e) if !e.is_retryable() => return Err(LlmError::Rejected(e)),
                Err(e) if attempt >= self.retry.max_retries => {
                    return Err(LlmError::Exhausted { attempts: attempt + 1, last: e });
                }
                Err(e) => {
                    log::warn!("{} request failed ({e}); retrying", request.stage);
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
            }
        };
        if self.store.mode() == Mode::Record {
            self.store.put(request.stage, &fingerprint, &raw)?;
        }
        Ok(ChatResponse::new(raw, TransportMeta { latency: started.elapsed(), retries: attempt, from_fixture: false }))
    }
}
