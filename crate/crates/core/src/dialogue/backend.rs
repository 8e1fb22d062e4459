//! Assistant backends behind a single `generate` port.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendRequest, ChatMessage, Role};

/// Environment variable holding the live backend's API key.
pub const API_KEY_ENV: &str = "VERBA_ARM_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("scripted backend exhausted after {0} replies")]
    Exhausted(usize),
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

pub trait LlmBackend: Send {
    /// Produces the assistant's reply to the given context window. May block.
    fn generate(&mut self, request: &BackendRequest) -> Result<String, BackendError>;

    fn name(&self) -> &'static str;
}

/// Splits a fixture file into replies. Replies are separated by lines that
/// contain only `---`; blank lines around each reply are dropped.
pub fn parse_fixture(text: &str) -> Vec<String> {
    let mut replies = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim_end_matches('\r') == "---" {
            replies.push(current.join("\n"));
            current.clear();
        } else {
            current.push(line.trim_end_matches('\r'));
        }
    }
    let tail = current.join("\n");
    if !tail.trim().is_empty() || replies.is_empty() && !text.is_empty() {
        replies.push(tail);
    }
    replies.into_iter().map(|r| r.trim_matches('\n').to_string()).collect()
}

/// Replays fixture replies in order; reply k answers the k-th call.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    replies: Vec<String>,
    next: usize,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        ScriptedBackend { replies, next: 0 }
    }

    pub fn from_fixture(text: &str) -> Self {
        Self::new(parse_fixture(text))
    }

    pub fn remaining(&self) -> usize {
        self.replies.len() - self.next
    }
}

impl LlmBackend for ScriptedBackend {
    fn generate(&mut self, _request: &BackendRequest) -> Result<String, BackendError> {
        let reply = self
            .replies
            .get(self.next)
            .cloned()
            .ok_or(BackendError::Exhausted(self.replies.len()))?;
        self.next += 1;
        Ok(reply)
    }

    fn name(&self) -> &'static str {
        "scripted"
    }
}

/// Answers with the latest user message. Useful for typing raw commands.
#[derive(Debug, Clone, Default)]
pub struct EchoBackend;

impl LlmBackend for EchoBackend {
    fn generate(&mut self, request: &BackendRequest) -> Result<String, BackendError> {
        Ok(request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.clone())
            .unwrap_or_default())
    }

    fn name(&self) -> &'static str {
        "echo"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveSettings {
    pub endpoint: String,
    pub model: String,
    pub timeout_s: f64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            timeout_s: 30.0,
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completion client: POSTs `{model, messages}` and reads the first
/// choice's message content.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    settings: LiveSettings,
    api_key: String,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

impl LiveBackend {
    pub fn new(settings: LiveSettings, api_key: String) -> Result<Self, BackendError> {
        if api_key.trim().is_empty() {
            return Err(BackendError::Config(format!("{API_KEY_ENV} is empty")));
        }
        if !(settings.timeout_s > 0.0 && settings.timeout_s.is_finite()) {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(settings.timeout_s))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(LiveBackend {
            client,
            settings,
            api_key,
        })
    }

    /// Reads the key from `VERBA_ARM_API_KEY`.
    pub fn from_env(settings: LiveSettings) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::Config(format!("{API_KEY_ENV} is not set")))?;
        Self::new(settings, key)
    }
}

impl LlmBackend for LiveBackend {
    fn generate(&mut self, request: &BackendRequest) -> Result<String, BackendError> {
        let body = CompletionRequest {
            model: &self.settings.model,
            messages: &request.messages,
        };
        let response = self
            .client
            .post(&self.settings.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.without_url().to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.without_url().to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))
    }

    fn name(&self) -> &'static str {
        "live"
    }
}
