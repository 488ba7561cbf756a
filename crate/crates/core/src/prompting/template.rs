//! Reflective chain-of-thought template.
//!
//! The template is a UTF-8 text asset split into sections by lines starting
//! with `## `. Text before the first section is the preamble. Every section
//! title must be one of the four step headers or `Output Format`, steps must
//! appear in canonical order, and the `{{variant_instruction}}` and
//! `{{icl_block}}` slots must each occur exactly once.
//!
//! Sections are kept as raw text so that removing a step for an ablation
//! leaves every other byte of the rendering unchanged.

use std::fmt;
use std::path::Path;

use super::PromptError;
use crate::digest::labeled_digest;

pub const VARIANT_SLOT: &str = "{{variant_instruction}}";
pub const ICL_SLOT: &str = "{{icl_block}}";
pub const OUTPUT_FORMAT_TITLE: &str = "Output Format";

const SECTION_MARKER: &str = "## ";

/// Template shipped with the crate.
pub const DEFAULT_TEMPLATE: &str = include_str!("../../assets/reflective_cot.txt");

/// One reasoning step, in the order the model is asked to produce them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepKind {
    OriginalImageDescription,
    Thoughts,
    Reflections,
    TargetImageDescription,
}

impl StepKind {
    pub const ALL: [StepKind; 4] = [
        StepKind::OriginalImageDescription,
        StepKind::Thoughts,
        StepKind::Reflections,
        StepKind::TargetImageDescription,
    ];

    pub fn header(self) -> &'static str {
        match self {
            StepKind::OriginalImageDescription => "Original Image Description",
            StepKind::Thoughts => "Thoughts",
            StepKind::Reflections => "Reflections",
            StepKind::TargetImageDescription => "Target Image Description",
        }
    }

    /// Key used for this step in JSON answers and in-context samples.
    pub fn json_key(self) -> &'static str {
        match self {
            StepKind::OriginalImageDescription => "original_image_description",
            StepKind::Thoughts => "thoughts",
            StepKind::Reflections => "reflections",
            StepKind::TargetImageDescription => "target_image_description",
        }
    }

    fn from_header(title: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.header() == title)
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SectionKind {
    Step(StepKind),
    OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Section {
    kind: SectionKind,
    /// Header line plus body, exactly as in the source.
    raw: String,
    body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotTemplate {
    preamble: String,
    sections: Vec<Section>,
}

impl CotTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut preamble = String::new();
        let mut sections: Vec<Section> = Vec::new();

        for line in text.split_inclusive('\n') {
            if let Some(title) = line.strip_prefix(SECTION_MARKER) {
                let title = title.trim();
                let kind = if title == OUTPUT_FORMAT_TITLE {
                    SectionKind::OutputFormat
                } else {
                    SectionKind::Step(StepKind::from_header(title).ok_or_else(|| {
                        PromptError::Template(format!("unknown section `{title}`"))
                    })?)
                };
                sections.push(Section {
                    kind,
                    raw: line.to_string(),
                    body: String::new(),
                });
            } else if let Some(section) = sections.last_mut() {
                section.raw.push_str(line);
                section.body.push_str(line);
            } else {
                preamble.push_str(line);
            }
        }

        let template = Self { preamble, sections };
        template.validate()?;
        Ok(template)
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn default_template() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }

    fn validate(&self) -> Result<(), PromptError> {
        let steps = self.steps();
        if steps.is_empty() {
            return Err(PromptError::Template("no reasoning steps".into()));
        }
        for pair in steps.windows(2) {
            if pair[0] >= pair[1] {
                return Err(PromptError::Template(format!(
                    "step `{}` is duplicated or out of order",
                    pair[1]
                )));
            }
        }
        let formats = self
            .sections
            .iter()
            .filter(|s| s.kind == SectionKind::OutputFormat)
            .count();
        if formats != 1 {
            return Err(PromptError::Template(format!(
                "expected one `{OUTPUT_FORMAT_TITLE}` section, found {formats}"
            )));
        }
        if let Some(last_step) = self
            .sections
            .iter()
            .rposition(|s| matches!(s.kind, SectionKind::Step(_)))
        {
            let format_pos = self
                .sections
                .iter()
                .position(|s| s.kind == SectionKind::OutputFormat)
                .unwrap_or(0);
            if format_pos < last_step {
                return Err(PromptError::Template(
                    "output format must follow the reasoning steps".into(),
                ));
            }
        }
        let raw = self.raw_text();
        for slot in [VARIANT_SLOT, ICL_SLOT] {
            let n = raw.matches(slot).count();
            if n != 1 {
                return Err(PromptError::Template(format!(
                    "slot {slot} must occur exactly once, found {n}"
                )));
            }
        }
        Ok(())
    }

    /// Step headers in template order.
    pub fn steps(&self) -> Vec<StepKind> {
        self.sections
            .iter()
            .filter_map(|s| match s.kind {
                SectionKind::Step(k) => Some(k),
                SectionKind::OutputFormat => None,
            })
            .collect()
    }

    /// True when all four steps are present.
    pub fn is_complete(&self) -> bool {
        self.steps() == StepKind::ALL
    }

    pub fn step_instruction(&self, step: StepKind) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.kind == SectionKind::Step(step))
            .map(|s| s.body.trim())
    }

    pub fn output_format_clause(&self) -> &str {
        self.sections
            .iter()
            .find(|s| s.kind == SectionKind::OutputFormat)
            .map(|s| s.body.trim())
            .unwrap_or_default()
    }

    /// Copy of the template with `step` removed. Removing a step that carries
    /// a required slot is rejected.
    pub fn without_step(&self, step: StepKind) -> Result<Self, PromptError> {
        let template = Self {
            preamble: self.preamble.clone(),
            sections: self
                .sections
                .iter()
                .filter(|s| s.kind != SectionKind::Step(step))
                .cloned()
                .collect(),
        };
        template.validate()?;
        Ok(template)
    }

    /// Source text with slots unfilled.
    pub fn raw_text(&self) -> String {
        let mut out = self.preamble.clone();
        for section in &self.sections {
            out.push_str(&section.raw);
        }
        out
    }

    /// Fill both slots. An empty variant fragment drops the slot's line.
    pub fn render(&self, variant_instruction: &str, icl_block: &str) -> String {
        let raw = self.raw_text();
        let with_variant = if variant_instruction.is_empty() {
            remove_slot_line(&raw, VARIANT_SLOT)
        } else {
            raw.replacen(VARIANT_SLOT, variant_instruction, 1)
        };
        let rendered = if icl_block.is_empty() {
            remove_slot_line(&with_variant, ICL_SLOT)
        } else {
            with_variant.replacen(ICL_SLOT, icl_block, 1)
        };
        rendered.trim_end().to_string()
    }

    /// Digest of the template together with the variant fragment it will be
    /// rendered with.
    pub fn digest(&self, variant_instruction: &str) -> String {
        let raw = self.raw_text();
        labeled_digest([
            ("template", raw.as_bytes()),
            ("variant", variant_instruction.as_bytes()),
        ])
    }
}

fn remove_slot_line(text: &str, slot: &str) -> String {
    let with_newline = format!("{slot}\n");
    if text.contains(&with_newline) {
        text.replacen(&with_newline, "", 1)
    } else {
        text.replacen(slot, "", 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_template_has_four_steps_in_order() {
        let t = CotTemplate::default_template();
        assert!(t.is_complete());
        assert_eq!(t.steps(), StepKind::ALL);
        assert!(t.output_format_clause().contains("target_image_description"));
        assert!(t
            .step_instruction(StepKind::Thoughts)
            .unwrap()
            .starts_with("Explain your understanding"));
    }

    #[test]
    fn rejects_unknown_section() {
        let err = CotTemplate::parse("pre\n## Musings\nx\n").unwrap_err();
        assert!(err.to_string().contains("Musings"));
    }

    #[test]
    fn rejects_out_of_order_steps() {
        let text = "p {{variant_instruction}}\n## Thoughts\na\n## Original Image Description\nb\n## Output Format\nc\n{{icl_block}}\n";
        assert!(matches!(
            CotTemplate::parse(text),
            Err(PromptError::Template(_))
        ));
    }

    #[test]
    fn rejects_missing_slot() {
        let text = "p\n## Thoughts\na\n## Output Format\nc\n{{icl_block}}\n";
        let err = CotTemplate::parse(text).unwrap_err();
        assert!(err.to_string().contains("variant_instruction"));
    }

    #[test]
    fn without_step_keeps_other_sections() {
        let t = CotTemplate::default_template();
        let ablated = t.without_step(StepKind::Reflections).unwrap();
        assert_eq!(ablated.steps().len(), 3);
        assert!(!ablated.raw_text().contains("## Reflections"));
        let full = t.raw_text();
        let reflections = &t
            .sections
            .iter()
            .find(|s| s.kind == SectionKind::Step(StepKind::Reflections))
            .unwrap()
            .raw;
        assert_eq!(full.replacen(reflections.as_str(), "", 1), ablated.raw_text());
    }

    #[test]
    fn empty_variant_removes_its_line() {
        let t = CotTemplate::default_template();
        let rendered = t.render("", "");
        assert!(!rendered.contains("{{"));
        assert!(rendered.ends_with("matching step."));
    }
}
