//! Multimodal LLM gateway.
//!
//! A [`Gateway`] sends requests to an [`MllmBackend`], retries transient
//! failures and unparseable answers with exponential backoff, bounds the
//! number of requests in flight across all callers, and turns answers into
//! validated [`ReasoningTrace`]s. An optional [`ResponseCache`] is consulted
//! before any request is sent.

mod backend;
mod fixture;
mod http;
mod limiter;
mod parse;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use backend::{
    cache_key, BackendFailure, BackendRequest, CacheError, CacheKeyParts, MllmBackend,
    RequestContext, ResponseCache, ScriptedBackend, Stage,
};
pub use fixture::{FixtureBackend, FixtureEntry};
pub use http::{chat_request_body, extract_chat_content, OpenAiChatBackend, OpenAiChatConfig};
pub use limiter::InFlightLimiter;
pub use parse::parse_response;

use crate::digest::sha256_hex;
use crate::prompting::{ImageAttachment, ManipulationText, PromptBundle, PromptError, ReferenceImage};

pub const MAX_RETRY_LIMIT: u32 = 5;

pub const DEFAULT_CAPTION_PROMPT: &str = include_str!("../../assets/caption_prompt.txt");
pub const DEFAULT_MODIFY_PROMPT: &str = include_str!("../../assets/modify_prompt.txt");
pub const CAPTION_SLOT: &str = "{{caption}}";
pub const MANIPULATION_SLOT: &str = "{{manipulation_text}}";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("backend `{backend}` failed after {attempts} attempt(s): {cause}")]
    Backend {
        backend: String,
        attempts: u32,
        cause: String,
    },
    #[error("unparseable response: {message}")]
    Parse { message: String, raw: String },
    #[error("response is missing fields: {}", missing.join(", "))]
    Schema { missing: Vec<String>, raw: String },
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<GatewayError>,
    },
    #[error("response cache: {0}")]
    Cache(#[from] CacheError),
}

impl GatewayError {
    /// The stage a two-stage failure happened in, if any.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            GatewayError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// Error with any stage tag removed.
    pub fn root(&self) -> &GatewayError {
        match self {
            GatewayError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<PromptError> for GatewayError {
    fn from(e: PromptError) -> Self {
        GatewayError::Input(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub backend_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout: Duration,
    pub retry_limit: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_base: Duration,
    /// Ceiling on concurrent requests shared by every worker of a gateway.
    pub max_in_flight: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            backend_name: "fixture".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            timeout: Duration::from_secs(60),
            retry_limit: 2,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.retry_limit > MAX_RETRY_LIMIT {
            return Err(GatewayError::Config(format!(
                "retry_limit {} exceeds {MAX_RETRY_LIMIT}",
                self.retry_limit
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Config("max_output_tokens must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::Config(format!(
                "temperature {} is not a non-negative number",
                self.temperature
            )));
        }
        Ok(())
    }

    fn backoff(&self, retry: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32 << (retry.saturating_sub(1)).min(16))
    }
}

/// Four-field answer of the reasoning model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub original_image_description: String,
    pub thoughts: String,
    pub reflections: String,
    pub target_image_description: String,
    pub raw_response: String,
    pub backend_name: String,
}

impl ReasoningTrace {
    pub fn fields(&self) -> [&str; 4] {
        [
            &self.original_image_description,
            &self.thoughts,
            &self.reflections,
            &self.target_image_description,
        ]
    }

    /// JSON object keyed by the step headers, as the model is asked to answer.
    pub fn to_canonical_json(&self) -> String {
        let mut map = serde_json::Map::new();
        for (step, value) in crate::prompting::StepKind::ALL.iter().zip(self.fields()) {
            map.insert(step.header().to_string(), value.into());
        }
        serde_json::Value::Object(map).to_string()
    }
}

/// Prompts for the caption-then-modify baseline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TwoStagePrompts {
    pub caption_prompt: String,
    /// Must contain `{{manipulation_text}}` and `{{caption}}`.
    pub modify_template: String,
}

impl Default for TwoStagePrompts {
    fn default() -> Self {
        Self {
            caption_prompt: DEFAULT_CAPTION_PROMPT.trim().to_string(),
            modify_template: DEFAULT_MODIFY_PROMPT.trim().to_string(),
        }
    }
}

impl TwoStagePrompts {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.caption_prompt.trim().is_empty() {
            return Err(GatewayError::Config("caption prompt is empty".into()));
        }
        for slot in [MANIPULATION_SLOT, CAPTION_SLOT] {
            if !self.modify_template.contains(slot) {
                return Err(GatewayError::Config(format!(
                    "modify prompt lacks the {slot} slot"
                )));
            }
        }
        Ok(())
    }

    pub fn render_modify(&self, manipulation: &str, caption: &str) -> String {
        self.modify_template
            .replace(MANIPULATION_SLOT, manipulation)
            .replace(CAPTION_SLOT, caption)
    }
}

pub struct Gateway {
    backend: Arc<dyn MllmBackend>,
    config: GenerationConfig,
    limiter: Arc<InFlightLimiter>,
    cache: Option<Arc<dyn ResponseCache>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn MllmBackend>, config: GenerationConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        if !backend.supports_images() {
            return Err(GatewayError::Config(format!(
                "backend `{}` does not accept images",
                backend.name()
            )));
        }
        let limiter = Arc::new(InFlightLimiter::new(config.max_in_flight));
        Ok(Self {
            backend,
            config,
            limiter,
            cache: None,
        })
    }

    pub fn with_cache(mut self, cache: Arc<dyn ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn limiter(&self) -> &InFlightLimiter {
        &self.limiter
    }

    /// One-stage query: one backend request per attempt.
    pub fn generate_trace(&self, bundle: &PromptBundle) -> Result<ReasoningTrace, GatewayError> {
        let key = cache_key(&CacheKeyParts {
            backend_name: &self.config.backend_name,
            temperature: self.config.temperature,
            stage: Stage::OneStage,
            template_digest: &bundle.template_digest,
            icl_digest: &bundle.icl_digest,
            image_digest: &bundle.image.digest,
            manipulation_text: &bundle.manipulation_text,
            extra: None,
        });
        let request = BackendRequest {
            system_text: bundle.system_text.clone(),
            image_label: Some(bundle.image_context_text()),
            image: Some(bundle.image.clone()),
            user_text: bundle.user_text(),
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            timeout: self.config.timeout,
            context: RequestContext {
                stage: Stage::OneStage,
                image_id: bundle.image.image_id.clone(),
                manipulation_text: bundle.manipulation_text.clone(),
                cache_key: key,
            },
        };
        let mut trace = self.call(&request, parse_response)?;
        trace.backend_name = self.config.backend_name.clone();
        Ok(trace)
    }

    /// Caption-then-modify baseline: the caption request never sees the
    /// manipulation text, the modify request never sees the image.
    pub fn two_stage_generate(
        &self,
        image: &ReferenceImage,
        manipulation: &str,
        prompts: &TwoStagePrompts,
    ) -> Result<ReasoningTrace, GatewayError> {
        let manipulation = ManipulationText::new(manipulation)?;
        prompts.validate()?;
        let attachment = ImageAttachment::encode(image)?;
        let no_icl = sha256_hex("");

        let caption_template = sha256_hex(&prompts.caption_prompt);
        let caption_request = BackendRequest {
            system_text: prompts.caption_prompt.clone(),
            image_label: Some(format!("{}:", crate::prompting::IMAGE_CONTEXT_LABEL)),
            image: Some(attachment.clone()),
            user_text: String::new(),
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            timeout: self.config.timeout,
            context: RequestContext {
                stage: Stage::Caption,
                image_id: image.id.clone(),
                manipulation_text: String::new(),
                cache_key: cache_key(&CacheKeyParts {
                    backend_name: &self.config.backend_name,
                    temperature: self.config.temperature,
                    stage: Stage::Caption,
                    template_digest: &caption_template,
                    icl_digest: &no_icl,
                    image_digest: &attachment.digest,
                    manipulation_text: "",
                    extra: None,
                }),
            },
        };
        let (caption, caption_raw) = self
            .call(&caption_request, |raw| plain_text(raw).map(|t| (t, raw.to_string())))
            .map_err(|e| e.in_stage(Stage::Caption))?;

        let modify_template = sha256_hex(&prompts.modify_template);
        let modify_request = BackendRequest {
            system_text: String::new(),
            image_label: None,
            image: None,
            user_text: prompts.render_modify(manipulation.as_str(), &caption),
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            timeout: self.config.timeout,
            context: RequestContext {
                stage: Stage::Modify,
                image_id: image.id.clone(),
                manipulation_text: manipulation.as_str().to_string(),
                cache_key: cache_key(&CacheKeyParts {
                    backend_name: &self.config.backend_name,
                    temperature: self.config.temperature,
                    stage: Stage::Modify,
                    template_digest: &modify_template,
                    icl_digest: &no_icl,
                    image_digest: &attachment.digest,
                    manipulation_text: manipulation.as_str(),
                    extra: Some(&caption),
                }),
            },
        };
        let (target, target_raw) = self
            .call(&modify_request, |raw| plain_text(raw).map(|t| (t, raw.to_string())))
            .map_err(|e| e.in_stage(Stage::Modify))?;

        Ok(ReasoningTrace {
            original_image_description: caption,
            thoughts: String::new(),
            reflections: String::new(),
            target_image_description: target,
            raw_response: format!("{caption_raw}\n---\n{target_raw}"),
            backend_name: self.config.backend_name.clone(),
        })
    }

    fn call<T>(
        &self,
        request: &BackendRequest,
        parse: impl Fn(&str) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let key = &request.context.cache_key;
        if let Some(cache) = &self.cache {
            if let Some(raw) = cache.get(key)? {
                return parse(&raw);
            }
        }

        let mut last_error = None;
        for attempt in 0..=self.config.retry_limit {
            if attempt > 0 {
                let delay = self.config.backoff(attempt);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.backend.send(request)
            };
            match outcome {
                Ok(raw) => match parse(&raw) {
                    Ok(value) => {
                        if let Some(cache) = &self.cache {
                            cache.put(key, &raw)?;
                        }
                        return Ok(value);
                    }
                    Err(e) => last_error = Some(e),
                },
                Err(BackendFailure::Fatal(cause)) => {
                    return Err(GatewayError::Backend {
                        backend: self.config.backend_name.clone(),
                        attempts: attempt + 1,
                        cause,
                    });
                }
                Err(failure) => {
                    last_error = Some(GatewayError::Backend {
                        backend: self.config.backend_name.clone(),
                        attempts: attempt + 1,
                        cause: failure.to_string(),
                    });
                }
            }
        }
        Err(last_error.expect("at least one attempt is made"))
    }
}

impl GatewayError {
    fn in_stage(self, stage: Stage) -> Self {
        GatewayError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Free-text answer of a baseline stage: trimmed, with a surrounding code
/// fence or quotes removed.
fn plain_text(raw: &str) -> Result<String, GatewayError> {
    let mut text = raw.trim();
    if let Some(inner) = text.strip_prefix("```").and_then(|t| t.strip_suffix("```")) {
        text = inner.split_once('\n').map(|(_, body)| body).unwrap_or(inner).trim();
    }
    if text.len() >= 2 && text.starts_with('"') && text.ends_with('"') {
        text = text[1..text.len() - 1].trim();
    }
    if text.is_empty() {
        return Err(GatewayError::Parse {
            message: "empty answer".into(),
            raw: raw.to_string(),
        });
    }
    Ok(text.to_string())
}

/// One-shot convenience over [`Gateway::generate_trace`].
pub fn generate_trace(
    backend: Arc<dyn MllmBackend>,
    bundle: &PromptBundle,
    config: &GenerationConfig,
) -> Result<ReasoningTrace, GatewayError> {
    Gateway::new(backend, config.clone())?.generate_trace(bundle)
}

/// One-shot convenience over [`Gateway::two_stage_generate`].
pub fn two_stage_generate(
    backend: Arc<dyn MllmBackend>,
    image: &ReferenceImage,
    manipulation: &str,
    config: &GenerationConfig,
) -> Result<ReasoningTrace, GatewayError> {
    Gateway::new(backend, config.clone())?.two_stage_generate(image, manipulation, &TwoStagePrompts::default())
}
