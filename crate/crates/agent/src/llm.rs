//! Text-completion backends: a fingerprint-keyed scripted mock, a remote
//! chat-completion client, and a call-recording wrapper.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out after {0:?}")]
    Timeout(Duration),
}

impl LlmError {
    pub fn code(&self) -> &'static str {
        match self {
            LlmError::Unavailable(_) => "BackendUnavailable",
            LlmError::Timeout(_) => "BackendTimeout",
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

/// Hex SHA-256 of the prompt with whitespace runs collapsed to one space
/// and the ends trimmed.
pub fn fingerprint(prompt: &str) -> String {
    let normalized = prompt.split_whitespace().collect::<Vec<_>>().join(" ");
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

/// One fixture transcript entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_fingerprint: String,
    pub response: String,
}

/// Canned responses keyed by prompt fingerprint.
#[derive(Default)]
pub struct ScriptedBackend {
    responses: HashMap<String, String>,
    fallback: Option<Box<dyn LlmBackend>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_transcript(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            responses: entries
                .into_iter()
                .map(|e| (e.prompt_fingerprint, e.response))
                .collect(),
            fallback: None,
        }
    }

    /// Loads a JSON array of `{prompt_fingerprint, response}`.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let entries: Vec<TranscriptEntry> = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok(Self::from_transcript(entries))
    }

    /// Registers `response` for `prompt`.
    pub fn insert(&mut self, prompt: &str, response: impl Into<String>) {
        self.responses.insert(fingerprint(prompt), response.into());
    }

    /// Answers unknown prompts with `backend` instead of failing.
    pub fn with_fallback(mut self, backend: impl LlmBackend + 'static) -> Self {
        self.fallback = Some(Box::new(backend));
        self
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = fingerprint(prompt);
        match (self.responses.get(&key), &self.fallback) {
            (Some(r), _) => Ok(r.clone()),
            (None, Some(fallback)) => fallback.complete(prompt),
            (None, None) => Err(LlmError::Unavailable(format!(
                "no scripted response for prompt {key}"
            ))),
        }
    }
}

/// A recorded backend call.
#[derive(Debug, Clone, PartialEq)]
pub struct Call {
    pub prompt: String,
    pub response: Result<String, LlmError>,
}

/// Wraps a backend and records every call.
pub struct RecordingBackend<B> {
    inner: B,
    calls: Mutex<Vec<Call>>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<Call> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log poisoned").len()
    }

    /// Successful calls as a fixture transcript.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.calls()
            .into_iter()
            .filter_map(|c| {
                c.response.ok().map(|response| TranscriptEntry {
                    prompt_fingerprint: fingerprint(&c.prompt),
                    response,
                })
            })
            .collect()
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let response = self.inner.complete(prompt);
        self.calls.lock().expect("call log poisoned").push(Call {
            prompt: prompt.to_string(),
            response: response.clone(),
        });
        response
    }
}

/// Chat-completion client: POSTs `{model, messages: [{role, content}]}`
/// and reads `choices[0].message.content`.
pub struct RemoteBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    content: String,
}

impl RemoteBackend {
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| LlmError::Unavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            timeout,
            client,
        })
    }
}

impl LlmBackend for RemoteBackend {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: 0.0,
        };
        let mut request = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                LlmError::Timeout(self.timeout)
            } else {
                LlmError::Unavailable(e.to_string())
            }
        };
        let response = request.send().map_err(classify)?;
        if !response.status().is_success() {
            return Err(LlmError::Unavailable(format!("HTTP {}", response.status())));
        }
        let parsed: ChatResponse = response.json().map_err(classify)?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Unavailable("response had no choices".into()))
    }
}
