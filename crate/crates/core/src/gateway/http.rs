//! Adapter for OpenAI-compatible chat-completions endpoints.
//!
//! The instruction text becomes the system message. The user message carries
//! the image label, the image as a base64 data URL, and the manipulation
//! text, in that order. The credential is read from the environment variable
//! named in the config at construction time and never written anywhere.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendFailure, BackendRequest, GatewayError, MllmBackend};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenAiChatConfig {
    pub name: String,
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key. Empty for unauthenticated servers.
    pub api_key_env: String,
    pub timeout: Duration,
}

pub struct OpenAiChatBackend {
    config: OpenAiChatConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiChatBackend {
    pub fn new(config: OpenAiChatConfig) -> Result<Self, GatewayError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&config.api_key_env).map_err(|_| {
                GatewayError::Config(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?)
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
        })
    }
}

pub fn chat_request_body(model: &str, request: &BackendRequest) -> Value {
    let mut messages = Vec::new();
    if !request.system_text.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_text}));
    }
    let mut content = Vec::new();
    if let Some(image) = &request.image {
        if let Some(label) = &request.image_label {
            content.push(json!({"type": "text", "text": label}));
        }
        content.push(json!({"type": "image_url", "image_url": {"url": image.data_url()}}));
    }
    if !request.user_text.is_empty() {
        content.push(json!({"type": "text", "text": request.user_text}));
    }
    messages.push(json!({"role": "user", "content": content}));
    json!({
        "model": model,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
        "messages": messages,
    })
}

pub fn extract_chat_content(body: &Value) -> Result<String, BackendFailure> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            BackendFailure::Transient(format!(
                "response has no choices[0].message.content: {}",
                truncate(&body.to_string(), 200)
            ))
        })
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl MllmBackend for OpenAiChatBackend {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn send(&self, request: &BackendRequest) -> Result<String, BackendFailure> {
        let body = chat_request_body(&self.config.model, request);
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendFailure::Timeout(self.config.timeout),
            other => BackendFailure::Transient(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendFailure::Transient(e.to_string()))?;
        match status {
            200..=299 => {
                let value: Value = serde_json::from_str(&text)
                    .map_err(|e| BackendFailure::Transient(format!("invalid JSON body: {e}")))?;
                extract_chat_content(&value)
            }
            408 | 429 | 500..=599 => Err(BackendFailure::Transient(format!(
                "HTTP {status}: {}",
                truncate(&text, 200)
            ))),
            _ => Err(BackendFailure::Fatal(format!(
                "HTTP {status}: {}",
                truncate(&text, 200)
            ))),
        }
    }
}
