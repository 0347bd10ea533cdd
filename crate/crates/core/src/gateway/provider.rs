//! Chat-completion and embedding provider interfaces, plus the HTTP client
//! for OpenAI-shaped endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider refused the request: {0}")]
    Refusal(String),
    #[error("prompt of ~{estimated} tokens exceeds the {limit}-token context window")]
    TokenLimit { estimated: usize, limit: usize },
    #[error("no parsable JSON payload in completion")]
    Format,
    #[error(transparent)]
    Template(#[from] super::template::TemplateError),
    #[error("provider credentials missing: environment variable {0} is not set")]
    MissingCredentials(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 1.0,
            max_tokens: 1000,
            top_p: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::Refusal("empty message list".into()));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::Refusal("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// All message contents joined, for hashing and token estimation.
    pub fn flattened(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.role);
            out.push('\n');
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: u64,
}

/// Rough token estimate used for context-window checks: four bytes per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// Embed each text; row `i` corresponds to `texts[i]`.
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;
}

const MAX_ATTEMPTS: u32 = 3;

/// Retry `op` on transport errors with capped exponential backoff. Refusals
/// and token-limit errors are never retried; format problems are handled by
/// the quality loop, not here, so they never reach this function.
pub(crate) fn with_retries<T>(
    mut op: impl FnMut() -> Result<T, GatewayError>,
) -> Result<T, GatewayError> {
    let mut delay = Duration::from_millis(250);
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        match op() {
            Ok(value) => return Ok(value),
            Err(GatewayError::Transport(message)) => {
                log::warn!("transport error (attempt {}): {message}", attempt + 1);
                last = Some(GatewayError::Transport(message));
                if attempt + 1 < MAX_ATTEMPTS {
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(Duration::from_secs(2));
                }
            }
            Err(other) => return Err(other),
        }
    }
    Err(last.unwrap_or_else(|| GatewayError::Transport("exhausted retries".into())))
}

/// Client for any chat/embeddings API following the OpenAI wire shape.
pub struct HttpProvider {
    base_url: String,
    api_key: String,
    context_window: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    top_p: f64,
}

#[derive(Deserialize)]
struct WireChatResponse {
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
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Serialize)]
struct WireEmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct WireEmbeddingResponse {
    data: Vec<WireEmbeddingRow>,
}

#[derive(Deserialize)]
struct WireEmbeddingRow {
    embedding: Vec<f64>,
}

impl HttpProvider {
    /// Build a provider from connection settings, reading the API key from the
    /// named environment variable. Keys never come from config files.
    pub fn from_env(
        base_url: impl Into<String>,
        api_key_env: &str,
        context_window: usize,
    ) -> Result<Self, GatewayError> {
        let api_key = std::env::var(api_key_env)
            .map_err(|_| GatewayError::MissingCredentials(api_key_env.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            context_window,
            agent: ureq::Agent::new_with_defaults(),
        })
    }

    fn post<T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &impl Serialize,
    ) -> Result<T, GatewayError> {
        let url = format!("{}{path}", self.base_url);
        with_retries(|| {
            let response = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(body);
            match response {
                Ok(mut resp) => resp
                    .body_mut()
                    .read_json::<T>()
                    .map_err(|e| GatewayError::Transport(format!("decode: {e}"))),
                Err(ureq::Error::StatusCode(code)) if (400..500).contains(&code) && code != 429 => {
                    Err(GatewayError::Refusal(format!("HTTP {code}")))
                }
                Err(e) => Err(GatewayError::Transport(e.to_string())),
            }
        })
    }
}

impl ChatProvider for HttpProvider {
    fn chat(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let estimated = estimate_tokens(&request.flattened());
        if estimated > self.context_window {
            return Err(GatewayError::TokenLimit {
                estimated,
                limit: self.context_window,
            });
        }
        let started = std::time::Instant::now();
        let wire: WireChatResponse = self.post(
            "/chat/completions",
            &WireChatRequest {
                model: &request.model,
                messages: &request.messages,
                temperature: request.temperature,
                max_tokens: request.max_tokens,
                top_p: request.top_p,
            },
        )?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::Refusal("no choices in response".into()))?;
        let usage = wire.usage.unwrap_or_default();
        Ok(Completion {
            text,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl EmbeddingProvider for HttpProvider {
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let wire: WireEmbeddingResponse = self.post(
            "/embeddings",
            &WireEmbeddingRequest {
                model,
                input: texts,
            },
        )?;
        if wire.data.len() != texts.len() {
            return Err(GatewayError::Transport(format!(
                "embedding count mismatch: sent {}, got {}",
                texts.len(),
                wire.data.len()
            )));
        }
        Ok(wire.data.into_iter().map(|row| row.embedding).collect())
    }
}
