//! Prompt construction for the one-stage reflective reasoning query.
//!
//! A [`PromptBundle`] is the concatenation of the rendered template (with the
//! in-context samples and task instruction filled in), the reference image
//! under the `Original Image Context` label, and the manipulation text under
//! the `Manipulation text` label, in that order.

mod icl;
mod template;
mod variant;

use std::borrow::Cow;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde::Serialize;

pub use icl::{
    default_samples, icl_digest, load_icl_file, load_icl_samples, render_icl_block, IclSample,
    DEFAULT_SAMPLES, IMAGE_PLACEHOLDER,
};
pub use template::{
    CotTemplate, StepKind, DEFAULT_TEMPLATE, ICL_SLOT, OUTPUT_FORMAT_TITLE, VARIANT_SLOT,
};
pub use variant::{
    select_task_variant, BenchmarkTask, TaskFamily, TaskVariant, VariantKind,
    CHANGE_INSTRUCTION, FASHION_INSTRUCTION, FOCUS_INSTRUCTION,
};

use crate::digest::sha256_hex;

pub const IMAGE_CONTEXT_LABEL: &str = "Original Image Context";
pub const MANIPULATION_LABEL: &str = "Manipulation text";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("invalid template: {0}")]
    Template(String),
    #[error("cannot parse ICL samples{}: {message}", index.map(|i| format!(" (sample {i})")).unwrap_or_default())]
    IclParse {
        index: Option<usize>,
        message: String,
    },
    #[error("ICL sample {index} is invalid: {message}")]
    IclValidation { index: usize, message: String },
    #[error("unknown benchmark task `{0}`")]
    UnknownTask(String),
    #[error("{0}")]
    Input(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImagePayload {
    Bytes(Vec<u8>),
    File(PathBuf),
    Missing,
}

/// Reference image of a query, or a gallery image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceImage {
    pub id: String,
    pub payload: ImagePayload,
    pub media_type: String,
    /// Stand-in content for mock embedding providers. Real providers ignore it.
    pub embed_key: Option<String>,
}

impl ReferenceImage {
    pub fn from_bytes(id: impl Into<String>, bytes: Vec<u8>, media_type: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: ImagePayload::Bytes(bytes),
            media_type: media_type.into(),
            embed_key: None,
        }
    }

    /// Image backed by a file; the media type is inferred from the extension.
    pub fn from_file(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let media_type = media_type_for(&path).to_string();
        Self {
            id: id.into(),
            payload: ImagePayload::File(path),
            media_type,
            embed_key: None,
        }
    }

    pub fn without_payload(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            payload: ImagePayload::Missing,
            media_type: String::new(),
            embed_key: None,
        }
    }

    pub fn with_embed_key(mut self, key: impl Into<String>) -> Self {
        self.embed_key = Some(key.into());
        self
    }

    pub fn resolve_bytes(&self) -> Result<Cow<'_, [u8]>, PromptError> {
        if self.id.is_empty() {
            return Err(PromptError::Input("image id is empty".into()));
        }
        match &self.payload {
            ImagePayload::Bytes(b) => Ok(Cow::Borrowed(b)),
            ImagePayload::File(path) => std::fs::read(path).map(Cow::Owned).map_err(|e| {
                PromptError::Input(format!(
                    "image `{}` is unreadable at {}: {e}",
                    self.id,
                    path.display()
                ))
            }),
            ImagePayload::Missing => Err(PromptError::Input(format!(
                "image `{}` has no payload",
                self.id
            ))),
        }
    }

    pub fn content_digest(&self) -> Result<String, PromptError> {
        Ok(sha256_hex(self.resolve_bytes()?))
    }
}

pub fn media_type_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// User edit instruction. Only surrounding whitespace is trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManipulationText(String);

impl ManipulationText {
    pub fn new(text: &str) -> Result<Self, PromptError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(PromptError::Input("manipulation text is empty".into()));
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Reference image encoded for transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ImageAttachment {
    pub image_id: String,
    pub media_type: String,
    pub base64_data: String,
    pub digest: String,
}

impl ImageAttachment {
    pub fn encode(image: &ReferenceImage) -> Result<Self, PromptError> {
        let bytes = image.resolve_bytes()?;
        Ok(Self {
            image_id: image.id.clone(),
            media_type: image.media_type.clone(),
            base64_data: base64::engine::general_purpose::STANDARD.encode(&bytes),
            digest: sha256_hex(&bytes),
        })
    }

    pub fn data_url(&self) -> String {
        format!("data:{};base64,{}", self.media_type, self.base64_data)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    /// Rendered template with task instruction and in-context samples.
    pub system_text: String,
    pub image: ImageAttachment,
    pub manipulation_text: String,
    pub template_digest: String,
    pub icl_digest: String,
}

impl PromptBundle {
    pub fn image_context_text(&self) -> String {
        format!("{IMAGE_CONTEXT_LABEL}:")
    }

    pub fn user_text(&self) -> String {
        format!("{MANIPULATION_LABEL}: {}", self.manipulation_text)
    }

    /// Canonical text form. The image slot holds the content hash, not the
    /// payload, so serializations of the same inputs are byte-identical.
    pub fn serialize(&self) -> String {
        format!(
            "{}\n\n{}\n[image sha256:{}]\n\n{}",
            self.system_text,
            self.image_context_text(),
            self.image.digest,
            self.user_text()
        )
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.serialize())
    }
}

pub fn assemble_prompt(
    template: &CotTemplate,
    samples: &[IclSample],
    image: &ReferenceImage,
    manipulation: &ManipulationText,
    variant: &TaskVariant,
) -> Result<PromptBundle, PromptError> {
    if manipulation.as_str().trim().is_empty() {
        return Err(PromptError::Input("manipulation text is empty".into()));
    }
    let attachment = ImageAttachment::encode(image)?;
    let icl_block = render_icl_block(samples);
    let system_text = template.render(&variant.extra_instruction, &icl_block);
    Ok(PromptBundle {
        system_text,
        image: attachment,
        manipulation_text: manipulation.as_str().to_string(),
        template_digest: template.digest(&variant.extra_instruction),
        icl_digest: sha256_hex(&icl_block),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ReferenceImage {
        ReferenceImage::from_bytes("q1", b"\x89PNG fake bytes".to_vec(), "image/png")
    }

    #[test]
    fn bundle_with_three_samples() {
        let template = CotTemplate::default_template();
        let m = ManipulationText::new("make the dog larger").unwrap();
        let bundle = assemble_prompt(
            &template,
            &default_samples(),
            &image(),
            &m,
            &TaskVariant::general(),
        )
        .unwrap();
        let text = bundle.serialize();
        assert_eq!(text.matches("Target Image Description").count(), 1);
        assert!(text.ends_with("Manipulation text: make the dog larger"));
        assert_eq!(text.matches("[image sha256:").count(), 1);
    }

    #[test]
    fn no_samples_means_no_example_section() {
        let template = CotTemplate::default_template();
        let m = ManipulationText::new("t").unwrap();
        let bundle =
            assemble_prompt(&template, &[], &image(), &m, &TaskVariant::general()).unwrap();
        let text = bundle.serialize();
        assert!(!text.contains("## Examples"));
        assert!(!text.contains(IMAGE_PLACEHOLDER));
        for step in StepKind::ALL {
            assert_eq!(text.matches(step.header()).count(), 1, "{step}");
        }
    }

    #[test]
    fn ablated_template_assembles_with_three_headers() {
        let template = CotTemplate::default_template()
            .without_step(StepKind::Reflections)
            .unwrap();
        let m = ManipulationText::new("t").unwrap();
        let bundle =
            assemble_prompt(&template, &[], &image(), &m, &TaskVariant::general()).unwrap();
        let text = bundle.serialize();
        assert!(!text.contains("Reflections"));
        assert!(text.contains("## Thoughts"));
    }

    #[test]
    fn variant_fragment_lands_in_instructions() {
        let template = CotTemplate::default_template();
        let m = ManipulationText::new("red").unwrap();
        let variant = select_task_variant("genecis_focus_attribute").unwrap();
        let bundle =
            assemble_prompt(&template, &default_samples(), &image(), &m, &variant).unwrap();
        let text = bundle.serialize();
        let frag = text.find(FOCUS_INSTRUCTION).unwrap();
        assert!(frag > text.find("## Target Image Description").unwrap());
        assert!(frag < text.find("## Output Format").unwrap());
    }

    #[test]
    fn empty_manipulation_is_rejected() {
        assert!(matches!(
            ManipulationText::new("   "),
            Err(PromptError::Input(_))
        ));
    }

    #[test]
    fn missing_payload_is_an_input_error() {
        let template = CotTemplate::default_template();
        let m = ManipulationText::new("t").unwrap();
        let missing = ReferenceImage::from_file("q9", "/nonexistent/q9.png");
        let err =
            assemble_prompt(&template, &[], &missing, &m, &TaskVariant::general()).unwrap_err();
        assert!(matches!(err, PromptError::Input(_)));
        assert!(ReferenceImage::without_payload("x").resolve_bytes().is_err());
    }

    #[test]
    fn manipulation_keeps_case_and_inner_spacing() {
        let m = ManipulationText::new("  Make it  BLUE \n").unwrap();
        assert_eq!(m.as_str(), "Make it  BLUE");
    }
}
