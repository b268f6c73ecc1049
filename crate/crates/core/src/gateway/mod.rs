//! Chat-completion backends, prompt rendering and response parsing.

mod http;
mod mock;
mod parse;
mod prompts;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use mock::{prompt_digest, ScriptedBackend, Transcript, TranscriptEntry};
pub use parse::{parse_response, ParsedResponse};
pub use prompts::{
    fence, load_shots, render_debug_prompt, render_initial_prompt, task_text, PromptMode, Shot,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication rejected by endpoint (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimit { attempts: u32 },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("no scripted completions for prompt digest {digest}")]
    Unscripted { digest: String },
    #[error("backend returned {got} completions, expected {expected}")]
    ShortCompletion { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("no code found in response")]
    NoCodeFound,
}

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

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub n: usize,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SamplingParams {
    pub fn new(temperature: f64, n: usize) -> Self {
        Self {
            temperature,
            n,
            max_tokens: 1024,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Invalid(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.n == 0 {
            return Err(GatewayError::Invalid("n must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::Invalid("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Returns up to `params.n` completions. [`complete_chat`] enforces the
    /// exact count.
    async fn complete(
        &self,
        model: &str,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError>;

    /// Identifies the backend in run manifests: an endpoint URL or a
    /// transcript digest.
    fn fingerprint(&self) -> String;
}

/// Validates the request and returns exactly `params.n` completions.
pub async fn complete_chat(
    backend: &dyn ChatBackend,
    model: &str,
    messages: &[ChatMessage],
    params: &SamplingParams,
) -> Result<Vec<String>, GatewayError> {
    params.validate()?;
    if messages.is_empty() {
        return Err(GatewayError::Invalid("no messages".into()));
    }
    if let Some(i) = messages.iter().position(|m| m.content.is_empty()) {
        return Err(GatewayError::Invalid(format!("message {i} is empty")));
    }
    let out = backend.complete(model, messages, params).await?;
    if out.len() != params.n {
        return Err(GatewayError::ShortCompletion {
            expected: params.n,
            got: out.len(),
        });
    }
    Ok(out)
}
