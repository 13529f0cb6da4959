use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{EndpointConfig, InferenceError, SamplingParams};

/// Token accounting reported by the server.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub reasoning_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatResponse {
    /// Answer text with any `<think>` block removed.
    pub content: String,
    pub reasoning: String,
    pub usage: Option<Usage>,
    /// Number of attempts the request took.
    pub attempts: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
    #[serde(default)]
    reasoning: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    completion_tokens_details: Option<WireDetails>,
}

#[derive(Deserialize)]
struct WireDetails {
    #[serde(default)]
    reasoning_tokens: Option<u64>,
}

/// Splits a leading `<think>...</think>` block off the answer.
pub(crate) fn split_think(text: &str) -> (String, String) {
    let trimmed = text.trim_start();
    if let Some(rest) = trimmed.strip_prefix("<think>") {
        if let Some(end) = rest.find("</think>") {
            let reasoning = rest[..end].trim().to_string();
            let answer = rest[end + "</think>".len()..].trim().to_string();
            return (reasoning, answer);
        }
    }
    if let Some(end) = text.find("</think>") {
        return (
            text[..end].trim().to_string(),
            text[end + "</think>".len()..].trim().to_string(),
        );
    }
    (String::new(), text.to_string())
}

fn decode(body: WireResponse, attempts: u32) -> Result<ChatResponse, String> {
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or("response has no choices")?;
    let raw = choice.message.content.unwrap_or_default();
    let explicit = choice
        .message
        .reasoning_content
        .or(choice.message.reasoning)
        .filter(|r| !r.is_empty());
    let (reasoning, content) = match explicit {
        Some(r) => {
            let (_, answer) = split_think(&raw);
            (r, answer)
        }
        None => split_think(&raw),
    };
    let usage = body.usage.map(|u| Usage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
        reasoning_tokens: u.completion_tokens_details.and_then(|d| d.reasoning_tokens),
    });
    Ok(ChatResponse {
        content,
        reasoning,
        usage,
        attempts,
    })
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Clone)]
pub struct ChatClient {
    http: reqwest::Client,
    config: EndpointConfig,
    url: String,
    api_key: Option<String>,
    permits: Arc<Semaphore>,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("url", &self.url)
            .field("model", &self.config.model_name)
            .finish()
    }
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self, InferenceError> {
        config.check()?;
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(
                std::env::var(&config.api_key_env)
                    .map_err(|_| InferenceError::MissingApiKey(config.api_key_env.clone()))?,
            )
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_seconds))
            .build()
            .map_err(|e| InferenceError::Config(e.to_string()))?;
        let base = config.base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        };
        Ok(Self {
            http,
            permits: Arc::new(Semaphore::new(config.max_parallel)),
            config,
            url,
            api_key,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn body(&self, prompt: &str, params: &SamplingParams, seed: Option<u64>) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "presence_penalty": params.presence_penalty,
            "max_tokens": params.max_tokens,
            "n": 1,
        });
        if let Some(k) = params.top_k {
            body["top_k"] = json!(k);
        }
        if let Some(s) = seed {
            body["seed"] = json!(s);
        }
        body
    }

    /// One completion, retried on transport errors, 408, 429 and 5xx.
    pub async fn complete(
        &self,
        prompt: &str,
        params: &SamplingParams,
        seed: Option<u64>,
    ) -> Result<ChatResponse, InferenceError> {
        let body = self.body(prompt, params, seed);
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|e| InferenceError::Config(e.to_string()))?;
        let max_attempts = self.config.retry_limit + 1;
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let delay = self.config.retry_backoff_ms << (attempt - 2).min(10);
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
            let mut request = self.http.post(&self.url).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let response = match request.send().await {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            if status.is_success() {
                match response.json::<WireResponse>().await {
                    Ok(body) => {
                        return decode(body, attempt).map_err(|message| InferenceError::Request {
                            attempts: attempt,
                            message,
                        })
                    }
                    Err(e) => {
                        last_error = format!("malformed response body: {e}");
                        continue;
                    }
                }
            }
            let text = response.text().await.unwrap_or_default();
            last_error = format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            );
            let retryable =
                status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error();
            if !retryable {
                return Err(InferenceError::Request {
                    attempts: attempt,
                    message: last_error,
                });
            }
        }
        Err(InferenceError::Request {
            attempts: max_attempts,
            message: last_error,
        })
    }
}
