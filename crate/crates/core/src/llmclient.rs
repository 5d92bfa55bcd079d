//! Chat-completion client.
//!
//! Two backends share the [`ChatBackend`] trait: [`HttpBackend`] speaks the
//! OpenAI-compatible `/chat/completions` wire format, [`ScriptedBackend`]
//! replays canned responses per agent role for offline, deterministic runs.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Generator,
    Evaluator,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Generator => "generator",
            AgentRole::Evaluator => "evaluator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Model parameters attached to every request an agent sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            model: "o3-mini".to_string(),
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Which agent is asking; routes scripted responses, not sent on the wire.
    pub agent: AgentRole,
    pub system_prompt: String,
    pub turns: Vec<Turn>,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        agent: AgentRole,
        system_prompt: impl Into<String>,
        turns: Vec<Turn>,
        settings: &ModelSettings,
    ) -> Self {
        ChatRequest {
            agent,
            system_prompt: system_prompt.into(),
            turns,
            model: settings.model.clone(),
            temperature: settings.temperature,
            max_output_tokens: settings.max_output_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.system_prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty system prompt".into()));
        }
        if self.turns.is_empty() {
            return Err(LlmError::InvalidRequest("no conversation turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            if turn.role != expected {
                return Err(LlmError::InvalidRequest(format!(
                    "turn {} should be {:?}",
                    i + 1,
                    expected
                )));
            }
        }
        if self.temperature.is_nan() || self.temperature < 0.0 || self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "temperature must be >= 0 and max_output_tokens positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {code}: {body_excerpt}")]
    HttpStatus { code: u16, body_excerpt: String },
    #[error("scripted responses for the {0} agent are exhausted")]
    Exhausted(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Errors that retrying or re-prompting cannot fix.
    pub fn is_unrecoverable(&self) -> bool {
        match self {
            LlmError::MissingApiKey(_)
            | LlmError::Exhausted(_)
            | LlmError::Config(_)
            | LlmError::InvalidRequest(_) => true,
            LlmError::HttpStatus { code, .. } => matches!(code, 400..=499) && *code != 429,
            LlmError::Timeout | LlmError::Transport(_) | LlmError::MalformedResponse(_) => false,
        }
    }

    fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::HttpStatus { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Scripted,
}

/// Where completions come from. Secrets are referenced by env-var name only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub api_key_env_var: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_secs: f64,
    pub script_path: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint_url: None,
            api_key_env_var: Some("OPENAI_API_KEY".to_string()),
            timeout_secs: 120.0,
            max_retries: 3,
            retry_backoff_secs: 1.0,
            script_path: None,
        }
    }
}

impl BackendConfig {
    pub fn http(endpoint_url: impl Into<String>, api_key_env_var: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            api_key_env_var: Some(api_key_env_var.into()),
            ..BackendConfig::default()
        }
    }

    pub fn scripted(script_path: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            script_path: Some(script_path.into()),
            ..BackendConfig::default()
        }
    }
}

/// Sends one request through a backend after validating it.
pub fn complete(backend: &dyn ChatBackend, request: &ChatRequest) -> Result<Completion, LlmError> {
    request.validate()?;
    backend.complete(request)
}

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key_env_var: String,
    max_retries: u32,
    retry_backoff: Duration,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, LlmError> {
        let endpoint = config
            .endpoint_url
            .as_deref()
            .ok_or_else(|| LlmError::Config("http backend needs endpoint_url".into()))?;
        let api_key_env_var = config
            .api_key_env_var
            .clone()
            .ok_or_else(|| LlmError::Config("http backend needs api_key_env_var".into()))?;
        if !config.timeout_secs.is_finite()
            || config.timeout_secs <= 0.0
            || config.retry_backoff_secs.is_nan()
            || config.retry_backoff_secs < 0.0
        {
            return Err(LlmError::Config(
                "timeout must be positive and backoff non-negative".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpBackend {
            agent,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key_env_var,
            max_retries: config.max_retries,
            retry_backoff: Duration::from_secs_f64(config.retry_backoff_secs),
        })
    }

    fn wire_body(request: &ChatRequest) -> serde_json::Value {
        let mut messages = vec![serde_json::json!({
            "role": "system",
            "content": request.system_prompt,
        })];
        messages.extend(request.turns.iter().map(|t| {
            serde_json::json!({
                "role": match t.role { Role::User => "user", Role::Assistant => "assistant" },
                "content": t.content,
            })
        }));
        serde_json::json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    fn attempt(&self, api_key: &str, body: &serde_json::Value) -> Result<Completion, LlmError> {
        let mut response = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => LlmError::Timeout,
                other => LlmError::Transport(other.to_string()),
            })?;
        let code = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout,
            other => LlmError::Transport(other.to_string()),
        })?;
        if !(200..300).contains(&code) {
            return Err(LlmError::HttpStatus {
                code,
                body_excerpt: text.chars().take(200).collect(),
            });
        }
        parse_completion_body(&text)
    }
}

/// Maps an OpenAI-style response body to its first choice.
pub fn parse_completion_body(text: &str) -> Result<Completion, LlmError> {
    #[derive(Deserialize)]
    struct Body {
        choices: Vec<Choice>,
        #[serde(default)]
        usage: Option<WireUsage>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: Message,
    }
    #[derive(Deserialize)]
    struct Message {
        content: Option<String>,
    }
    #[derive(Deserialize)]
    struct WireUsage {
        #[serde(default)]
        prompt_tokens: u64,
        #[serde(default)]
        completion_tokens: u64,
    }

    let body: Body =
        serde_json::from_str(text).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))?;
    let content = choice
        .message
        .content
        .ok_or_else(|| LlmError::MalformedResponse("choice has no content".into()))?;
    let usage = body.usage.map_or(Usage::default(), |u| Usage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
    });
    Ok(Completion { content, usage })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let api_key = std::env::var(&self.api_key_env_var)
            .map_err(|_| LlmError::MissingApiKey(self.api_key_env_var.clone()))?;
        let body = Self::wire_body(request);
        let mut attempt = 0u32;
        loop {
            debug!(
                "POST {} model={} agent={} attempt={}",
                self.url,
                request.model,
                request.agent.as_str(),
                attempt + 1
            );
            match self.attempt(&api_key, &body) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    let wait = self.retry_backoff.mul_f64(2f64.powi(attempt as i32));
                    warn!("transient LLM error ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub agent: AgentRole,
    pub content: String,
}

impl ScriptEntry {
    pub fn new(agent: AgentRole, content: impl Into<String>) -> Self {
        ScriptEntry {
            agent,
            content: content.into(),
        }
    }
}

/// Canned-response document.
///
/// `entries` serve single runs. `tasks` holds per-task entry lists for
/// corpus runs. `ground_truth_fallback` asks the harness to synthesize
/// generator responses from ground truth for tasks without entries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptFile {
    pub entries: Vec<ScriptEntry>,
    pub tasks: BTreeMap<String, Vec<ScriptEntry>>,
    pub ground_truth_fallback: bool,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("parsing {}: {e}", path.display())))
    }

    /// Entries for a task, falling back to the top-level list.
    pub fn entries_for(&self, task_id: Option<&str>) -> Option<&[ScriptEntry]> {
        if let Some(entries) = task_id.and_then(|id| self.tasks.get(id)) {
            return Some(entries);
        }
        if !self.entries.is_empty() {
            return Some(&self.entries);
        }
        None
    }
}

#[derive(Default)]
struct ScriptState {
    queues: BTreeMap<AgentRole, VecDeque<String>>,
    log: Vec<ChatRequest>,
}

/// Replays responses in order, one queue per agent role.
#[derive(Default)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut state = ScriptState::default();
        for e in entries {
            state
                .queues
                .entry(e.agent)
                .or_default()
                .push_back(e.content);
        }
        ScriptedBackend {
            state: Mutex::new(state),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(ScriptFile::load(path)?.entries))
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("script lock").log.clone()
    }

    pub fn remaining(&self, agent: AgentRole) -> usize {
        self.state
            .lock()
            .expect("script lock")
            .queues
            .get(&agent)
            .map_or(0, VecDeque::len)
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let mut state = self.state.lock().expect("script lock");
        state.log.push(request.clone());
        let content = state
            .queues
            .get_mut(&request.agent)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| LlmError::Exhausted(request.agent.as_str().to_string()))?;
        let prompt_tokens = word_count(&request.system_prompt)
            + request
                .turns
                .iter()
                .map(|t| word_count(&t.content))
                .sum::<u64>();
        Ok(Completion {
            usage: Usage {
                prompt_tokens,
                completion_tokens: word_count(&content),
            },
            content,
        })
    }
}

/// Builds a backend from configuration.
pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn ChatBackend>, LlmError> {
    match config.kind {
        BackendKind::Http => Ok(Arc::new(HttpBackend::new(config)?)),
        BackendKind::Scripted => {
            let path = config
                .script_path
                .as_deref()
                .ok_or_else(|| LlmError::Config("scripted backend needs script_path".into()))?;
            Ok(Arc::new(ScriptedBackend::from_file(path)?))
        }
    }
}
