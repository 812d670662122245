//! Chat-completion client for OpenAI-compatible endpoints.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, LanguageModel, LlmResponse};

#[derive(Debug, Clone, PartialEq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Timeout,
    Connection(String),
}

/// Sends one JSON POST. Swappable so retry behavior can be tested offline.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        bearer: Option<&str>,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError>;
}

#[derive(Debug, Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        bearer: Option<&str>,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body_mut()
                    .read_to_string()
                    .map_err(map_ureq_error)?;
                Ok(HttpReply { status, body })
            }
            Err(e) => Err(map_ureq_error(e)),
        }
    }
}

fn map_ureq_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Connection(other.to_string()),
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

pub struct ChatClient {
    config: BackendConfig,
    transport: Box<dyn Transport>,
}

impl ChatClient {
    pub fn new(config: BackendConfig) -> Self {
        Self::with_transport(config, Box::new(UreqTransport))
    }

    pub fn with_transport(config: BackendConfig, transport: Box<dyn Transport>) -> Self {
        Self { config, transport }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn request_body(&self, prompt: &str) -> String {
        serde_json::to_string(&ChatRequest {
            model: &self.config.model_name,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
        })
        .expect("request serializes")
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let secs = self.config.backoff_base * 2f64.powi(attempt.min(16) as i32);
        Duration::from_secs_f64(secs.min(30.0))
    }
}

/// Extracts the first choice's message content.
pub fn parse_chat_response(body: &str) -> Result<String, BackendError> {
    let parsed: ChatResponse = serde_json::from_str(body)
        .map_err(|e| BackendError::Unavailable(format!("malformed response: {e}")))?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::Unavailable("response has no message content".into()))?;
    if content.is_empty() {
        return Err(BackendError::Unavailable("empty completion".into()));
    }
    Ok(content)
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl LanguageModel for ChatClient {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::Unavailable("empty prompt".into()));
        }
        let body = self.request_body(prompt);
        let mut last = BackendError::Unavailable("no attempt made".into());
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                thread::sleep(self.backoff(attempt - 1));
            }
            match self.transport.post_json(
                &self.config.endpoint,
                &body,
                self.config.auth_token.as_deref(),
                self.config.timeout_duration(),
            ) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return parse_chat_response(&reply.body).map(LlmResponse::from_text);
                }
                Ok(reply) if is_transient(reply.status) => {
                    log::warn!("llm endpoint returned {} (attempt {})", reply.status, attempt + 1);
                    last = BackendError::Unavailable(format!("HTTP {}", reply.status));
                }
                Ok(reply) => {
                    return Err(BackendError::Unavailable(format!(
                        "HTTP {}: {}",
                        reply.status, reply.body
                    )));
                }
                Err(TransportError::Timeout) => last = BackendError::Timeout,
                Err(TransportError::Connection(msg)) => last = BackendError::Unavailable(msg),
            }
        }
        Err(last)
    }
}
