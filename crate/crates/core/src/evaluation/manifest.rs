//! JSONL benchmark manifests, one query record per line.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::prompting::BenchmarkTask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub query_id: String,
    pub reference_image_id: String,
    pub manipulation_text: String,
    pub ground_truth_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_ids: Option<Vec<String>>,
    pub task: BenchmarkTask,
    #[serde(default)]
    pub split_tag: String,
}

impl QueryRecord {
    fn check(&self) -> Result<(), String> {
        if self.query_id.trim().is_empty() {
            return Err("query_id is empty".into());
        }
        if self.ground_truth_ids.is_empty() {
            return Err(format!("`{}` has no ground truth", self.query_id));
        }
        if let Some(subset) = &self.subset_ids {
            let members: HashSet<&str> = subset.iter().map(String::as_str).collect();
            if members.len() != subset.len() {
                return Err(format!("`{}` subset repeats an id", self.query_id));
            }
            if let Some(id) = self
                .ground_truth_ids
                .iter()
                .find(|id| !members.contains(id.as_str()))
            {
                return Err(format!(
                    "`{}` ground truth `{id}` is not in its subset",
                    self.query_id
                ));
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<QueryRecord>, EvalError> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord = serde_json::from_str(line).map_err(|e| EvalError::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        record.check().map_err(|message| EvalError::Manifest {
            line: line_no,
            message,
        })?;
        if !ids.insert(record.query_id.clone()) {
            return Err(EvalError::Manifest {
                line: line_no,
                message: format!("duplicate query_id `{}`", record.query_id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<QueryRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

/// Every ground-truth and subset id must exist in the gallery.
pub fn check_against_gallery(
    records: &[QueryRecord],
    contains: impl Fn(&str) -> bool,
) -> Result<(), EvalError> {
    for r in records {
        let subset = r.subset_ids.iter().flatten();
        if let Some(id) = r.ground_truth_ids.iter().chain(subset).find(|id| !contains(id)) {
            return Err(EvalError::Input(format!(
                "query `{}` references `{id}`, which is not in the gallery",
                r.query_id
            )));
        }
    }
    Ok(())
}
