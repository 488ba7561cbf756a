//! Benchmark tasks and the per-task instruction fragment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkTask {
    General,
    Circo,
    Cirr,
    GenecisFocusAttribute,
    GenecisChangeAttribute,
    GenecisFocusObject,
    GenecisChangeObject,
    FashioniqDress,
    FashioniqShirt,
    FashioniqToptee,
}

/// Benchmark family a task's metrics are reported under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    General,
    Circo,
    Cirr,
    Genecis,
    Fashioniq,
}

impl BenchmarkTask {
    pub const ALL: [BenchmarkTask; 10] = [
        BenchmarkTask::General,
        BenchmarkTask::Circo,
        BenchmarkTask::Cirr,
        BenchmarkTask::GenecisFocusAttribute,
        BenchmarkTask::GenecisChangeAttribute,
        BenchmarkTask::GenecisFocusObject,
        BenchmarkTask::GenecisChangeObject,
        BenchmarkTask::FashioniqDress,
        BenchmarkTask::FashioniqShirt,
        BenchmarkTask::FashioniqToptee,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkTask::General => "general",
            BenchmarkTask::Circo => "circo",
            BenchmarkTask::Cirr => "cirr",
            BenchmarkTask::GenecisFocusAttribute => "genecis_focus_attribute",
            BenchmarkTask::GenecisChangeAttribute => "genecis_change_attribute",
            BenchmarkTask::GenecisFocusObject => "genecis_focus_object",
            BenchmarkTask::GenecisChangeObject => "genecis_change_object",
            BenchmarkTask::FashioniqDress => "fashioniq_dress",
            BenchmarkTask::FashioniqShirt => "fashioniq_shirt",
            BenchmarkTask::FashioniqToptee => "fashioniq_toptee",
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            BenchmarkTask::General => TaskFamily::General,
            BenchmarkTask::Circo => TaskFamily::Circo,
            BenchmarkTask::Cirr => TaskFamily::Cirr,
            BenchmarkTask::GenecisFocusAttribute
            | BenchmarkTask::GenecisChangeAttribute
            | BenchmarkTask::GenecisFocusObject
            | BenchmarkTask::GenecisChangeObject => TaskFamily::Genecis,
            BenchmarkTask::FashioniqDress
            | BenchmarkTask::FashioniqShirt
            | BenchmarkTask::FashioniqToptee => TaskFamily::Fashioniq,
        }
    }
}

impl fmt::Display for BenchmarkTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkTask {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == wanted)
            .ok_or_else(|| PromptError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    General,
    GenecisFocus,
    GenecisChange,
    FashionAttribute,
}

pub const FOCUS_INSTRUCTION: &str = "The manipulation text is a single attribute or object. \
Retain the attribute or object specified in the instruction and describe a target image that centers on it.";

pub const CHANGE_INSTRUCTION: &str = "The manipulation text is a single attribute or object. \
Replace the corresponding object or attribute of the reference image with the one given in the instruction, \
and describe the resulting target image.";

pub const FASHION_INSTRUCTION: &str = "The reference image shows a garment. \
Describe only the target garment, applying every requested change to its attributes.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskVariant {
    pub kind: VariantKind,
    pub extra_instruction: String,
}

impl TaskVariant {
    pub fn general() -> Self {
        Self::for_kind(VariantKind::General)
    }

    pub fn for_kind(kind: VariantKind) -> Self {
        let extra = match kind {
            VariantKind::General => "",
            VariantKind::GenecisFocus => FOCUS_INSTRUCTION,
            VariantKind::GenecisChange => CHANGE_INSTRUCTION,
            VariantKind::FashionAttribute => FASHION_INSTRUCTION,
        };
        Self {
            kind,
            extra_instruction: extra.to_string(),
        }
    }
}

impl From<BenchmarkTask> for TaskVariant {
    fn from(task: BenchmarkTask) -> Self {
        let kind = match task {
            BenchmarkTask::General | BenchmarkTask::Circo | BenchmarkTask::Cirr => {
                VariantKind::General
            }
            BenchmarkTask::GenecisFocusAttribute | BenchmarkTask::GenecisFocusObject => {
                VariantKind::GenecisFocus
            }
            BenchmarkTask::GenecisChangeAttribute | BenchmarkTask::GenecisChangeObject => {
                VariantKind::GenecisChange
            }
            BenchmarkTask::FashioniqDress
            | BenchmarkTask::FashioniqShirt
            | BenchmarkTask::FashioniqToptee => VariantKind::FashionAttribute,
        };
        TaskVariant::for_kind(kind)
    }
}

pub fn select_task_variant(task_name: &str) -> Result<TaskVariant, PromptError> {
    Ok(task_name.parse::<BenchmarkTask>()?.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focus_task_retains() {
        let v = select_task_variant("genecis_focus_attribute").unwrap();
        assert_eq!(v.kind, VariantKind::GenecisFocus);
        assert!(v
            .extra_instruction
            .to_lowercase()
            .contains("retain the attribute or object specified"));
    }

    #[test]
    fn change_task_replaces() {
        let v = select_task_variant("genecis_change_object").unwrap();
        assert_eq!(v.kind, VariantKind::GenecisChange);
        assert!(v
            .extra_instruction
            .to_lowercase()
            .contains("replace the corresponding object"));
    }

    #[test]
    fn circo_is_general() {
        let v = select_task_variant("circo").unwrap();
        assert_eq!(v.kind, VariantKind::General);
        assert!(v.extra_instruction.is_empty());
    }

    #[test]
    fn unknown_task() {
        assert!(matches!(
            select_task_variant("imagenet"),
            Err(PromptError::UnknownTask(_))
        ));
    }

    #[test]
    fn names_round_trip() {
        for task in BenchmarkTask::ALL {
            assert_eq!(task.as_str().parse::<BenchmarkTask>().unwrap(), task);
        }
    }
}
