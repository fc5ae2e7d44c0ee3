//! OpenAI-compatible `/chat/completions` and `/embeddings` transports.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{BackendError, ChatMessage, ChatReply, ChatTransport, CompletionParams, EmbedReply, EmbedTransport};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "PROMPTMIX_API_KEY";

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
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

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Endpoint {
    agent: Agent,
    base_url: String,
    api_key: Option<String>,
}

impl Endpoint {
    fn new(base_url: &str, api_key: Option<String>) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        }
    }

    fn post<Req: Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
        timeout: Duration,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}/{}", self.base_url, path);
        let payload = serde_json::to_vec(body).map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let mut request = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .config()
            .timeout_global(Some(timeout))
            .build()
            .send(&payload[..])
            .map_err(transport_error)?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let message = response
                .body_mut()
                .read_to_string()
                .unwrap_or_default();
            return Err(BackendError::from_status(status, error_message(&message)));
        }
        response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

/// Pulls `error.message` out of an OpenAI-style error body when present.
fn error_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
        .unwrap_or_else(|| body.chars().take(300).collect())
}

fn transport_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::BodyStalled => BackendError::Transient(err.to_string()),
        ureq::Error::StatusCode(status) => BackendError::from_status(status, ""),
        other => BackendError::InvalidRequest(other.to_string()),
    }
}

/// Chat transport for any OpenAI-compatible server.
#[derive(Debug, Clone)]
pub struct OpenAiChat {
    endpoint: Endpoint,
}

impl OpenAiChat {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            endpoint: Endpoint::new(base_url, api_key),
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(base_url: &str) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok())
    }
}

impl ChatTransport for OpenAiChat {
    fn send(&self, messages: &[ChatMessage], params: &CompletionParams) -> Result<ChatReply, BackendError> {
        let body = ChatRequest {
            model: &params.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let response: ChatResponse =
            self.endpoint
                .post("chat/completions", &body, params.request_timeout)?;
        let text = response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("response has no message content".into()))?;
        let usage = response.usage.unwrap_or_default();
        Ok(ChatReply {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

/// Embedding transport for any OpenAI-compatible server.
#[derive(Debug, Clone)]
pub struct OpenAiEmbed {
    endpoint: Endpoint,
    model: String,
    timeout: Duration,
}

impl OpenAiEmbed {
    pub fn new(base_url: &str, api_key: Option<String>, model: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: Endpoint::new(base_url, api_key),
            model: model.into(),
            timeout,
        }
    }

    pub fn from_env(base_url: &str, model: impl Into<String>, timeout: Duration) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok(), model, timeout)
    }
}

impl EmbedTransport for OpenAiEmbed {
    fn send(&self, text: &str) -> Result<EmbedReply, BackendError> {
        let body = EmbedRequest {
            model: &self.model,
            input: text,
        };
        let response: EmbedResponse = self.endpoint.post("embeddings", &body, self.timeout)?;
        let values = response
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| BackendError::Malformed("response has no embedding".into()))?;
        Ok(EmbedReply {
            values,
            prompt_tokens: response.usage.unwrap_or_default().prompt_tokens,
        })
    }
}
