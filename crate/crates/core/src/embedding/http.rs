//! Adapter for an external embedding service.
//!
//! Text requests post `{"model", "input": <text>}`; image requests post
//! `{"model", "image": <base64 data URL>}`. Either way the service answers
//! in the OpenAI embeddings shape, `{"data": [{"embedding": [...]}]}`.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Embedding, EmbeddingError, EmbeddingProvider};
use crate::prompting::{ImageAttachment, ReferenceImage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpEmbeddingConfig {
    pub name: String,
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub api_key_env: String,
    pub timeout: Duration,
}

pub struct HttpEmbeddingProvider {
    config: HttpEmbeddingConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(config: HttpEmbeddingConfig) -> Result<Self, EmbeddingError> {
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&config.api_key_env).map_err(|_| {
                EmbeddingError::Input(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?)
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
        })
    }

    fn post(&self, body: Value) -> Result<Embedding, EmbeddingError> {
        let fail = |message: String| EmbeddingError::Provider {
            provider: self.config.name.clone(),
            message,
        };
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| fail(e.to_string()))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| fail(e.to_string()))?;
        parse_embedding_response(&value).map_err(fail)
    }
}

pub(crate) fn parse_embedding_response(value: &Value) -> Result<Embedding, String> {
    let values = value
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or("response has no data[0].embedding array")?;
    values
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| format!("non-numeric component {v}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Embedding::new)
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        self.post(json!({"model": self.config.model, "input": text}))
    }

    fn embed_image(&self, image: &ReferenceImage) -> Result<Embedding, EmbeddingError> {
        let attachment =
            ImageAttachment::encode(image).map_err(|e| EmbeddingError::Input(e.to_string()))?;
        self.post(json!({"model": self.config.model, "image": attachment.data_url()}))
    }
}
