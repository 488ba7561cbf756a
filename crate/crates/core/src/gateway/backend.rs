use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::digest::labeled_digest;
use crate::prompting::ImageAttachment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    #[serde(rename = "onestage", alias = "one_stage")]
    OneStage,
    Caption,
    Modify,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::OneStage => "onestage",
            Stage::Caption => "caption",
            Stage::Modify => "modify",
        }
    }
}


impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metadata travelling with a request. HTTP adapters ignore it; the fixture
/// backend keys its answers on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestContext {
    pub stage: Stage,
    pub image_id: String,
    pub manipulation_text: String,
    pub cache_key: String,
}

/// Transport-agnostic request: instruction text, optional labeled image and
/// the trailing user text, plus generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub system_text: String,
    pub image_label: Option<String>,
    pub image: Option<ImageAttachment>,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout: Duration,
    pub context: RequestContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendFailure {
    /// Worth retrying: rate limits, 5xx, dropped connections.
    Transient(String),
    Timeout(Duration),
    /// Retrying cannot help: bad credentials, unknown model, missing fixture.
    Fatal(String),
}

impl fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendFailure::Transient(m) => write!(f, "transient failure: {m}"),
            BackendFailure::Timeout(d) => write!(f, "timed out after {d:?}"),
            BackendFailure::Fatal(m) => f.write_str(m),
        }
    }
}

pub trait MllmBackend: Send + Sync {
    fn name(&self) -> &str;

    fn supports_images(&self) -> bool;

    /// Raw answer text. Must tolerate concurrent calls.
    fn send(&self, request: &BackendRequest) -> Result<String, BackendFailure>;
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("{0}")]
    Io(String),
    #[error("entry {key} already holds a different response")]
    Integrity { key: String },
    #[error("entry {key} is corrupt: {message}")]
    Corrupt { key: String, message: String },
}

pub trait ResponseCache: Send + Sync {
    fn get(&self, key: &str) -> Result<Option<String>, CacheError>;
    fn put(&self, key: &str, raw_response: &str) -> Result<(), CacheError>;
}

/// Ingredients of a response cache key.
#[derive(Debug, Clone, Copy)]
pub struct CacheKeyParts<'a> {
    pub backend_name: &'a str,
    pub temperature: f64,
    pub stage: Stage,
    pub template_digest: &'a str,
    pub icl_digest: &'a str,
    pub image_digest: &'a str,
    pub manipulation_text: &'a str,
    /// Stage-specific input, e.g. the caption fed to the modify stage.
    pub extra: Option<&'a str>,
}

pub fn cache_key(parts: &CacheKeyParts<'_>) -> String {
    let temperature = parts.temperature.to_bits().to_le_bytes();
    let extra = parts.extra.unwrap_or_default();
    let has_extra = [u8::from(parts.extra.is_some())];
    labeled_digest([
        ("backend", parts.backend_name.as_bytes()),
        ("temperature", temperature.as_slice()),
        ("stage", parts.stage.as_str().as_bytes()),
        ("template", parts.template_digest.as_bytes()),
        ("icl", parts.icl_digest.as_bytes()),
        ("image", parts.image_digest.as_bytes()),
        ("manipulation", parts.manipulation_text.as_bytes()),
        ("has_extra", has_extra.as_slice()),
        ("extra", extra.as_bytes()),
    ])
}

/// Backend replaying a fixed sequence of outcomes, for exercising retry and
/// failure paths. Once the script runs out every call fails fatally.
pub struct ScriptedBackend {
    name: String,
    script: Mutex<VecDeque<Result<String, BackendFailure>>>,
    calls: AtomicUsize,
    requests: Mutex<Vec<BackendRequest>>,
}

impl ScriptedBackend {
    pub fn new(
        name: impl Into<String>,
        script: impl IntoIterator<Item = Result<String, BackendFailure>>,
    ) -> Self {
        Self {
            name: name.into(),
            script: Mutex::new(script.into_iter().collect()),
            calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn invocations(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<BackendRequest> {
        self.requests.lock().expect("request log poisoned").clone()
    }
}

impl MllmBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn send(&self, request: &BackendRequest) -> Result<String, BackendFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.requests
            .lock()
            .expect("request log poisoned")
            .push(request.clone());
        self.script
            .lock()
            .expect("script poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(BackendFailure::Fatal("script exhausted".into())))
    }
}
