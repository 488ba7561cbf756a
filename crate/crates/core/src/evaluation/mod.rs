//! Retrieval metrics, benchmark manifests and report tables.

mod manifest;
mod report;

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

pub use manifest::{check_against_gallery, load_manifest, parse_manifest, QueryRecord};
pub use report::{evaluate_run, MetricReport, MetricSpec, QueryRankings, RunInfo};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Input(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("no ranking for queries: {}", .0.join(", "))]
    MissingRankings(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn check_inputs<S: AsRef<str>>(
    ranked: &[S],
    ground_truth: &BTreeSet<String>,
    k: usize,
) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::Input("k must be at least 1".into()));
    }
    if ground_truth.is_empty() {
        return Err(EvalError::Input("ground truth is empty".into()));
    }
    let mut seen = HashSet::with_capacity(ranked.len());
    for id in ranked {
        if !seen.insert(id.as_ref()) {
            return Err(EvalError::Input(format!(
                "ranked list repeats `{}`",
                id.as_ref()
            )));
        }
    }
    Ok(())
}

/// 1 if a ground-truth id is within the first `k` positions, else 0.
pub fn recall_at_k<S: AsRef<str>>(
    ranked: &[S],
    ground_truth: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    check_inputs(ranked, ground_truth, k)?;
    let hit = ranked
        .iter()
        .take(k)
        .any(|id| ground_truth.contains(id.as_ref()));
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Truncated average precision normalized by `min(k, |ground_truth|)`.
/// Lists shorter than `k` are scored over their length.
pub fn ap_at_k<S: AsRef<str>>(
    ranked: &[S],
    ground_truth: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    check_inputs(ranked, ground_truth, k)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, id) in ranked.iter().take(k).enumerate() {
        if ground_truth.contains(id.as_ref()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / k.min(ground_truth.len()) as f64)
}

/// Mean of per-query AP@k.
pub fn map_at_k<S: AsRef<str>>(
    records: &[(Vec<S>, BTreeSet<String>)],
    k: usize,
) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Input("no records to average".into()));
    }
    let mut sum = 0.0;
    for (ranked, gt) in records {
        sum += ap_at_k(ranked, gt, k)?;
    }
    Ok(sum / records.len() as f64)
}

/// Recall@k over a subset ranking. The ranking must cover exactly the
/// record's subset, and the subset must contain the ground truth.
pub fn recall_subset_at_k<S: AsRef<str>>(
    record: &QueryRecord,
    subset_ranking: &[S],
    k: usize,
) -> Result<f64, EvalError> {
    let subset = record.subset_ids.as_ref().ok_or_else(|| {
        EvalError::Input(format!("query `{}` has no subset", record.query_id))
    })?;
    let subset: BTreeSet<&str> = subset.iter().map(String::as_str).collect();
    let ranked: BTreeSet<&str> = subset_ranking.iter().map(AsRef::as_ref).collect();
    if ranked != subset || subset_ranking.len() != subset.len() {
        return Err(EvalError::Input(format!(
            "subset ranking for `{}` does not cover its subset",
            record.query_id
        )));
    }
    if let Some(gt) = record
        .ground_truth_ids
        .iter()
        .find(|id| !subset.contains(id.as_str()))
    {
        return Err(EvalError::Input(format!(
            "ground truth `{gt}` of `{}` is outside its subset",
            record.query_id
        )));
    }
    recall_at_k(subset_ranking, &record.ground_truth_ids, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::BenchmarkTask;

    fn gt(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&["a", "b", "c"], &gt(&["a"]), 1).unwrap(), 1.0);
        assert_eq!(recall_at_k(&["b", "c"], &gt(&["a"]), 10).unwrap(), 0.0);
    }

    #[test]
    fn recall_mean_over_ranks() {
        let names: Vec<String> = (1..=12).map(|i| format!("c{i}")).collect();
        let ranks = [1usize, 3, 7, 12];
        let sum: f64 = ranks
            .iter()
            .map(|&r| recall_at_k(&names, &gt(&[&names[r - 1]]), 5).unwrap())
            .sum();
        assert_eq!(sum / ranks.len() as f64, 0.5);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(ap_at_k(&["a", "q", "r"], &gt(&["a"]), 5).unwrap(), 1.0);
        assert_eq!(
            ap_at_k(&["x", "a", "y", "b", "z"], &gt(&["a", "b"]), 5).unwrap(),
            0.5
        );
        assert_eq!(ap_at_k(&["x", "y"], &gt(&["a"]), 2).unwrap(), 0.0);
    }

    #[test]
    fn map_examples() {
        let rows = vec![
            (vec!["a"], gt(&["a"])),
            (vec!["x", "a", "y", "b", "z"], gt(&["a", "b"])),
        ];
        assert_eq!(map_at_k(&rows, 5).unwrap(), 0.75);
        assert_eq!(map_at_k(&rows[1..], 5).unwrap(), 0.5);
        assert!(map_at_k::<&str>(&[], 5).is_err());
    }

    #[test]
    fn input_errors() {
        assert!(recall_at_k(&["a"], &gt(&[]), 1).is_err());
        assert!(ap_at_k(&["a"], &gt(&["a"]), 0).is_err());
        assert!(ap_at_k(&["a", "a"], &gt(&["a"]), 2).is_err());
    }

    fn subset_record(subset: &[&str], truth: &[&str]) -> QueryRecord {
        QueryRecord {
            query_id: "q".into(),
            reference_image_id: "r".into(),
            manipulation_text: "t".into(),
            ground_truth_ids: gt(truth),
            subset_ids: Some(subset.iter().map(|s| s.to_string()).collect()),
            task: BenchmarkTask::Cirr,
            split_tag: "test".into(),
        }
    }

    #[test]
    fn subset_recall() {
        let rec = subset_record(&["a", "b", "c", "d", "e", "f"], &["c"]);
        let ranking = ["a", "c", "b", "d", "e", "f"];
        assert_eq!(recall_subset_at_k(&rec, &ranking, 1).unwrap(), 0.0);
        assert_eq!(recall_subset_at_k(&rec, &ranking, 2).unwrap(), 1.0);
    }

    #[test]
    fn subset_errors() {
        let rec = subset_record(&["a", "b"], &["z"]);
        assert!(recall_subset_at_k(&rec, &["a", "b"], 1).is_err());
        let rec = subset_record(&["a", "b"], &["a"]);
        assert!(recall_subset_at_k(&rec, &["a"], 1).is_err());
        assert!(recall_subset_at_k(&rec, &["a", "c"], 1).is_err());
    }
}
