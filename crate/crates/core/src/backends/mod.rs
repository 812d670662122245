//! Interfaces for the four external model roles: diarizer, recognizer,
//! speaker-embedding extractor and language model.
//!
//! Real models live behind user-supplied shims. This module ships the
//! traits, deterministic mocks driven by a JSON script, and an HTTP
//! chat-completion client.

pub mod http;
pub mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DiarSegment, Embedding, TimeInterval, Word};

pub use http::{ChatClient, HttpReply, Transport, TransportError, UreqTransport};
pub use mock::{MockBackends, MockScript, OracleLlm, ScriptedLlm, UnreachableLlm};

/// Shortest window the default embedding extractor accepts, in seconds.
pub const DEFAULT_MIN_EMBED_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("window of {duration:.3}s is shorter than the {minimum:.3}s minimum")]
    WindowTooShort { duration: f64, minimum: f64 },
    #[error("backend call timed out")]
    Timeout,
}

/// Reference to a recording. Only single-channel audio is accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRef {
    pub uri: String,
    pub sample_rate_hz: u32,
    pub channel_count: u16,
    /// Recording length in seconds.
    pub duration: f64,
}

impl AudioRef {
    pub fn mono(uri: impl Into<String>, sample_rate_hz: u32, duration: f64) -> Self {
        Self {
            uri: uri.into(),
            sample_rate_hz,
            channel_count: 1,
            duration,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.channel_count != 1 {
            return Err(BackendError::InvalidAudio(format!(
                "expected single-channel audio, got {} channels",
                self.channel_count
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(BackendError::InvalidAudio("sample rate must be positive".into()));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(BackendError::InvalidAudio(format!(
                "invalid duration {}",
                self.duration
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub text: String,
    pub parsed: Option<serde_json::Value>,
}

impl LlmResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let parsed = crate::adjudicator::extract_json_object(&text);
        Self { text, parsed }
    }
}

/// Connection settings for one backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model_name: String,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    /// First retry delay in seconds; doubles on each further attempt.
    pub backoff_base: f64,
    /// Never read from or written to config files.
    #[serde(skip)]
    pub auth_token: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "gpt-4.1".into(),
            timeout: 60.0,
            max_retries: 3,
            backoff_base: 0.5,
            auth_token: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout > 0.0) {
            return Err("timeout must be positive".into());
        }
        if !(self.backoff_base >= 0.0) {
            return Err("backoff_base must be non-negative".into());
        }
        Ok(())
    }

    pub fn timeout_duration(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }
}

pub trait Diarizer: Send + Sync {
    /// Segments without words, sorted by start. With a window, only
    /// segments intersecting it are returned, clipped to it.
    fn diarize(
        &self,
        audio: &AudioRef,
        window: Option<TimeInterval>,
    ) -> Result<Vec<DiarSegment>, BackendError>;
}

pub trait Transcriber: Send + Sync {
    /// Words sorted by start, with absolute recording timestamps.
    fn transcribe(
        &self,
        audio: &AudioRef,
        window: Option<TimeInterval>,
    ) -> Result<Vec<Word>, BackendError>;
}

pub trait SpeakerEmbedder: Send + Sync {
    fn embed(&self, audio: &AudioRef, window: TimeInterval) -> Result<Embedding, BackendError>;

    fn min_window(&self) -> f64 {
        DEFAULT_MIN_EMBED_WINDOW
    }
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, BackendError>;
}

impl<T: Diarizer + ?Sized> Diarizer for std::sync::Arc<T> {
    fn diarize(
        &self,
        audio: &AudioRef,
        window: Option<TimeInterval>,
    ) -> Result<Vec<DiarSegment>, BackendError> {
        (**self).diarize(audio, window)
    }
}

impl<T: Transcriber + ?Sized> Transcriber for std::sync::Arc<T> {
    fn transcribe(
        &self,
        audio: &AudioRef,
        window: Option<TimeInterval>,
    ) -> Result<Vec<Word>, BackendError> {
        (**self).transcribe(audio, window)
    }
}

impl<T: SpeakerEmbedder + ?Sized> SpeakerEmbedder for std::sync::Arc<T> {
    fn embed(&self, audio: &AudioRef, window: TimeInterval) -> Result<Embedding, BackendError> {
        (**self).embed(audio, window)
    }

    fn min_window(&self) -> f64 {
        (**self).min_window()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, BackendError> {
        (**self).complete(prompt)
    }
}
