use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;

use super::{ChatBackend, ChatMessage, GatewayError, SamplingParams};

pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
    pub max_in_flight: usize,
    pub request_timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_in_flight: 8,
            request_timeout: Duration::from_secs(300),
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::Client,
    in_flight: Semaphore,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    index: usize,
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    Fatal(GatewayError),
    Retry { rate_limited: bool, message: String },
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| GatewayError::Invalid(e.to_string()))?;
        Ok(Self {
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            config,
            client,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    async fn request_once(
        &self,
        model: &str,
        messages: &[ChatMessage],
        params: &SamplingParams,
        n: usize,
    ) -> Result<Vec<String>, Failure> {
        let mut body = json!({
            "model": model,
            "messages": messages,
            "temperature": params.temperature,
            "n": n,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        let mut req = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let _permit = self.in_flight.acquire().await.expect("semaphore is never closed");
        let resp = req.send().await.map_err(|e| Failure::Retry {
            rate_limited: false,
            message: e.to_string(),
        })?;
        let status = resp.status();
        match status.as_u16() {
            401 | 403 => {
                return Err(Failure::Fatal(GatewayError::Auth {
                    status: status.as_u16(),
                }))
            }
            429 => {
                return Err(Failure::Retry {
                    rate_limited: true,
                    message: "HTTP 429".into(),
                })
            }
            _ if !status.is_success() => {
                let text = resp.text().await.unwrap_or_default();
                let message = format!("HTTP {}: {}", status.as_u16(), text.chars().take(200).collect::<String>());
                return if status.is_server_error() {
                    Err(Failure::Retry {
                        rate_limited: false,
                        message,
                    })
                } else {
                    Err(Failure::Fatal(GatewayError::Transport {
                        attempts: 1,
                        message,
                    }))
                };
            }
            _ => {}
        }
        let mut parsed: CompletionResponse = resp.json().await.map_err(|e| Failure::Retry {
            rate_limited: false,
            message: format!("malformed response: {e}"),
        })?;
        parsed.choices.sort_by_key(|c| c.index);
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }

    /// One logical request with retries. Only a successful response adds
    /// completions, so a retry never duplicates output.
    async fn request_with_retry(
        &self,
        model: &str,
        messages: &[ChatMessage],
        params: &SamplingParams,
        n: usize,
    ) -> Result<Vec<String>, GatewayError> {
        let mut delay = self.config.base_delay;
        let attempts = self.config.max_attempts.max(1);
        let mut last = (false, String::new());
        for attempt in 1..=attempts {
            match self.request_once(model, messages, params, n).await {
                Ok(out) => return Ok(out),
                Err(Failure::Fatal(GatewayError::Transport { message, .. })) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry {
                    rate_limited,
                    message,
                }) => {
                    tracing::debug!(attempt, %message, "chat request failed");
                    last = (rate_limited, message);
                    if attempt < attempts {
                        tokio::time::sleep(delay).await;
                        delay *= 2;
                    }
                }
            }
        }
        Err(if last.0 {
            GatewayError::RateLimit { attempts }
        } else {
            GatewayError::Transport {
                attempts,
                message: last.1,
            }
        })
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(
        &self,
        model: &str,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<Vec<String>, GatewayError> {
        let mut out = Vec::with_capacity(params.n);
        // Some servers cap n; ask again for the remainder.
        while out.len() < params.n {
            let want = params.n - out.len();
            let got = self.request_with_retry(model, messages, params, want).await?;
            if got.is_empty() {
                return Err(GatewayError::ShortCompletion {
                    expected: params.n,
                    got: out.len(),
                });
            }
            out.extend(got.into_iter().take(want));
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        format!("endpoint:{}", self.config.endpoint)
    }
}
