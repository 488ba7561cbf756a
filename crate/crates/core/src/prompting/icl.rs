//! Vision-by-language in-context samples.
//!
//! Each sample is a complete expected answer written as text. The reference
//! image is never attached; every sample carries the literal `<image_url>`
//! placeholder instead.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PromptError, IMAGE_CONTEXT_LABEL, MANIPULATION_LABEL};
use crate::digest::sha256_hex;

pub const IMAGE_PLACEHOLDER: &str = "<image_url>";

/// Samples shipped with the crate (three).
pub const DEFAULT_SAMPLES: &str = include_str!("../../assets/icl_samples.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclSample {
    #[serde(rename = "image_url")]
    pub image_placeholder: String,
    pub manipulation_text: String,
    pub original_image_description: String,
    pub thoughts: String,
    pub reflections: String,
    pub target_image_description: String,
}

impl IclSample {
    fn validate(&self, index: usize) -> Result<(), PromptError> {
        if self.image_placeholder != IMAGE_PLACEHOLDER {
            return Err(PromptError::IclValidation {
                index,
                message: format!(
                    "image_url must be the placeholder {IMAGE_PLACEHOLDER}, got `{}`",
                    self.image_placeholder
                ),
            });
        }
        let fields = [
            ("manipulation_text", &self.manipulation_text),
            ("original_image_description", &self.original_image_description),
            ("thoughts", &self.thoughts),
            ("reflections", &self.reflections),
            ("target_image_description", &self.target_image_description),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(PromptError::IclValidation {
                    index,
                    message: format!("`{name}` is empty"),
                });
            }
        }
        Ok(())
    }

    fn answer_json(&self) -> String {
        // Field order is fixed by the struct below, so rendering is stable.
        #[derive(Serialize)]
        struct Answer<'a> {
            original_image_description: &'a str,
            thoughts: &'a str,
            reflections: &'a str,
            target_image_description: &'a str,
        }
        serde_json::to_string_pretty(&Answer {
            original_image_description: &self.original_image_description,
            thoughts: &self.thoughts,
            reflections: &self.reflections,
            target_image_description: &self.target_image_description,
        })
        .expect("string fields always serialize")
    }
}

/// Parse a JSON array of samples. Whitespace-only input is an empty list.
pub fn load_icl_samples(source: &str) -> Result<Vec<IclSample>, PromptError> {
    if source.trim().is_empty() {
        return Ok(Vec::new());
    }
    let records: Vec<serde_json::Value> =
        serde_json::from_str(source).map_err(|e| PromptError::IclParse {
            index: None,
            message: e.to_string(),
        })?;
    records
        .into_iter()
        .enumerate()
        .map(|(index, record)| {
            let sample: IclSample =
                serde_json::from_value(record).map_err(|e| PromptError::IclParse {
                    index: Some(index),
                    message: e.to_string(),
                })?;
            sample.validate(index)?;
            Ok(sample)
        })
        .collect()
}

pub fn load_icl_file(path: &Path) -> Result<Vec<IclSample>, PromptError> {
    let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_icl_samples(&text)
}

pub fn default_samples() -> Vec<IclSample> {
    load_icl_samples(DEFAULT_SAMPLES).expect("bundled samples are valid")
}

/// Text block substituted into the template's ICL slot. Empty for no samples.
pub fn render_icl_block(samples: &[IclSample]) -> String {
    if samples.is_empty() {
        return String::new();
    }
    let mut out = String::from("\n## Examples\n");
    out.push_str(&format!(
        "The examples below show the expected answer. {IMAGE_PLACEHOLDER} stands in for the reference image.\n"
    ));
    for (i, sample) in samples.iter().enumerate() {
        out.push_str(&format!(
            "\nExample {}\n{IMAGE_CONTEXT_LABEL}: {}\n{MANIPULATION_LABEL}: {}\nAnswer:\n{}\n",
            i + 1,
            sample.image_placeholder,
            sample.manipulation_text,
            sample.answer_json()
        ));
    }
    out
}

pub fn icl_digest(samples: &[IclSample]) -> String {
    sha256_hex(render_icl_block(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_json(url: &str) -> String {
        format!(
            r#"[{{"image_url":"{url}","manipulation_text":"m","original_image_description":"o","thoughts":"t","reflections":"r","target_image_description":"d"}}]"#
        )
    }

    #[test]
    fn default_set_has_three_samples() {
        let samples = default_samples();
        assert_eq!(samples.len(), 3);
        assert!(samples[0]
            .manipulation_text
            .starts_with("Change to a large fancy white carriage"));
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(load_icl_samples("").unwrap().is_empty());
        assert!(load_icl_samples("  \n").unwrap().is_empty());
        assert!(load_icl_samples("[]").unwrap().is_empty());
    }

    #[test]
    fn real_url_is_rejected() {
        let err = load_icl_samples(&sample_json("http://x/y.jpg")).unwrap_err();
        assert!(matches!(err, PromptError::IclValidation { index: 0, .. }));
    }

    #[test]
    fn malformed_record_names_its_index() {
        let text = format!(
            "[{}, {{\"image_url\": \"<image_url>\"}}]",
            sample_json("<image_url>").trim_matches(|c| c == '[' || c == ']')
        );
        match load_icl_samples(&text).unwrap_err() {
            PromptError::IclParse { index, .. } => assert_eq!(index, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn blank_field_is_rejected() {
        let text = sample_json("<image_url>").replace("\"t\"", "\"  \"");
        let err = load_icl_samples(&text).unwrap_err();
        assert!(err.to_string().contains("thoughts"));
    }

    #[test]
    fn block_uses_only_placeholder() {
        let block = render_icl_block(&default_samples());
        assert_eq!(block.matches("Example ").count(), 3);
        assert!(!block.contains("http"));
        assert!(render_icl_block(&[]).is_empty());
    }
}
