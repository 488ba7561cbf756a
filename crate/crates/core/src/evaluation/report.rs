//! Per-task metric aggregation and report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ap_at_k, recall_at_k, recall_subset_at_k, EvalError, QueryRecord};
use crate::prompting::{BenchmarkTask, TaskFamily};

/// Which metrics a task reports, and at which cutoffs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricSpec {
    pub recall_ks: Vec<usize>,
    pub map_ks: Vec<usize>,
    pub subset_ks: Vec<usize>,
}

impl MetricSpec {
    pub fn for_task(task: BenchmarkTask) -> Self {
        let (recall, map, subset): (&[usize], &[usize], &[usize]) = match task.family() {
            TaskFamily::General => (&[1, 5, 10], &[5, 10, 25, 50], &[]),
            TaskFamily::Circo => (&[], &[5, 10, 25, 50], &[]),
            TaskFamily::Cirr => (&[1, 5, 10], &[], &[1, 2, 3]),
            TaskFamily::Genecis => (&[1, 2, 3], &[], &[]),
            TaskFamily::Fashioniq => (&[10, 50], &[], &[]),
        };
        Self {
            recall_ks: recall.to_vec(),
            map_ks: map.to_vec(),
            subset_ks: subset.to_vec(),
        }
    }

    /// Replaces the recall and mAP cutoffs a task reports. Subset cutoffs
    /// are kept.
    pub fn with_ks(mut self, ks: &[usize]) -> Self {
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        if !self.recall_ks.is_empty() {
            self.recall_ks = ks.clone();
        }
        if !self.map_ks.is_empty() {
            self.map_ks = ks;
        }
        self
    }

    /// Retrieval depth needed to compute every full-gallery metric.
    pub fn depth(&self) -> usize {
        self.recall_ks
            .iter()
            .chain(&self.map_ks)
            .copied()
            .max()
            .unwrap_or(1)
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.recall_ks.iter().chain(&self.map_ks).chain(&self.subset_ks).any(|&k| k == 0) {
            return Err(EvalError::Input("metric cutoffs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ranked candidate ids for one query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRankings {
    pub ranked: Vec<String>,
    #[serde(default)]
    pub subset: Option<Vec<String>>,
    /// The query could not be answered and is scored as a miss.
    #[serde(default)]
    pub failed: bool,
}

impl QueryRankings {
    pub fn new(ranked: Vec<String>, subset: Option<Vec<String>>) -> Self {
        Self {
            ranked,
            subset,
            failed: false,
        }
    }

    pub fn miss() -> Self {
        Self {
            failed: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub provider: String,
    pub backend: String,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub provider: String,
    pub backend: String,
    pub mode: String,
    /// task → `metric@k` → value.
    pub metrics: BTreeMap<String, BTreeMap<String, f64>>,
    pub query_count: usize,
    pub task_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_query_ids: Vec<String>,
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    sums: BTreeMap<String, f64>,
}

impl Accumulator {
    fn add(&mut self, key: String, value: f64) {
        *self.sums.entry(key).or_insert(0.0) += value;
    }

    fn means(&self) -> BTreeMap<String, f64> {
        self.sums
            .iter()
            .map(|(k, v)| (k.clone(), v / self.count as f64))
            .collect()
    }
}

/// Scores every record against its rankings, folding in `query_id` order.
pub fn evaluate_run(
    records: &[QueryRecord],
    rankings: &BTreeMap<String, QueryRankings>,
    spec_for: impl Fn(BenchmarkTask) -> MetricSpec,
    info: RunInfo,
) -> Result<MetricReport, EvalError> {
    let mut ordered: Vec<&QueryRecord> = records.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let missing: Vec<String> = ordered
        .iter()
        .filter(|r| !rankings.contains_key(&r.query_id))
        .map(|r| r.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingRankings(missing));
    }

    let mut per_task: BTreeMap<BenchmarkTask, Accumulator> = BTreeMap::new();
    let mut pooled_fashion = Accumulator::default();
    let mut failed = Vec::new();

    for record in ordered {
        let ranking = &rankings[&record.query_id];
        let spec = spec_for(record.task);
        spec.validate()?;
        if ranking.failed {
            failed.push(record.query_id.clone());
        }
        let gt = &record.ground_truth_ids;
        let mut values = Vec::new();
        for &k in &spec.recall_ks {
            values.push((format!("R@{k}"), recall_at_k(&ranking.ranked, gt, k)?));
        }
        for &k in &spec.map_ks {
            values.push((format!("mAP@{k}"), ap_at_k(&ranking.ranked, gt, k)?));
        }
        if !spec.subset_ks.is_empty() && record.subset_ids.is_some() {
            for &k in &spec.subset_ks {
                let value = match &ranking.subset {
                    Some(subset) => recall_subset_at_k(record, subset, k)?,
                    None if ranking.failed => 0.0,
                    None => {
                        return Err(EvalError::Input(format!(
                            "no subset ranking for `{}`",
                            record.query_id
                        )))
                    }
                };
                values.push((format!("R_subset@{k}"), value));
            }
        }

        let acc = per_task.entry(record.task).or_default();
        acc.count += 1;
        if record.task.family() == TaskFamily::Fashioniq {
            pooled_fashion.count += 1;
        }
        for (key, value) in values {
            if record.task.family() == TaskFamily::Fashioniq {
                pooled_fashion.add(key.clone(), value);
            }
            acc.add(key, value);
        }
    }

    let mut metrics = BTreeMap::new();
    let mut task_counts = BTreeMap::new();
    for (task, acc) in &per_task {
        metrics.insert(task.as_str().to_string(), acc.means());
        task_counts.insert(task.as_str().to_string(), acc.count);
    }
    for (family, name) in [
        (TaskFamily::Genecis, "genecis_average"),
        (TaskFamily::Fashioniq, "fashioniq_average"),
    ] {
        let rows: Vec<BTreeMap<String, f64>> = per_task
            .iter()
            .filter(|(t, _)| t.family() == family)
            .map(|(_, acc)| acc.means())
            .collect();
        if let Some(avg) = average_rows(&rows, family == TaskFamily::Genecis) {
            metrics.insert(name.to_string(), avg);
        }
    }
    if pooled_fashion.count > 0 {
        metrics.insert("fashioniq_pooled".to_string(), pooled_fashion.means());
    }

    Ok(MetricReport {
        run_id: info.run_id,
        provider: info.provider,
        backend: info.backend,
        mode: info.mode,
        metrics,
        query_count: records.len(),
        task_counts,
        failed_query_ids: failed,
    })
}

/// Unweighted mean over rows of the keys every row shares. With
/// `first_recall_only`, only the smallest recall cutoff is kept.
fn average_rows(
    rows: &[BTreeMap<String, f64>],
    first_recall_only: bool,
) -> Option<BTreeMap<String, f64>> {
    let first = rows.first()?;
    let mut keys: Vec<&String> = first
        .keys()
        .filter(|k| rows.iter().all(|r| r.contains_key(*k)))
        .collect();
    if first_recall_only {
        keys.sort_by_key(|k| metric_order(k));
        keys.retain(|k| k.starts_with("R@"));
        keys.truncate(1);
    }
    let out: BTreeMap<String, f64> = keys
        .into_iter()
        .map(|k| {
            let sum: f64 = rows.iter().map(|r| r[k]).sum();
            (k.clone(), sum / rows.len() as f64)
        })
        .collect();
    (!out.is_empty()).then_some(out)
}

fn metric_order(key: &str) -> (u8, usize) {
    let (name, k) = key.split_once('@').unwrap_or((key, ""));
    let kind = match name {
        "R" => 0,
        "R_subset" => 1,
        "mAP" => 2,
        _ => 3,
    };
    (kind, k.parse().unwrap_or(usize::MAX))
}

fn family_rank(task: &str) -> u8 {
    match task.split('_').next().unwrap_or(task) {
        "general" => 0,
        "circo" => 1,
        "cirr" => 2,
        "genecis" => 3,
        "fashioniq" => 4,
        _ => 5,
    }
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Aligned text table, one block per benchmark family.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "run {}  mode {}  backend {}  provider {}  queries {}",
            self.run_id, self.mode, self.backend, self.provider, self.query_count
        );
        if !self.failed_query_ids.is_empty() {
            let _ = writeln!(out, "scored as misses: {}", self.failed_query_ids.join(", "));
        }

        let mut tasks: Vec<&String> = self.metrics.keys().collect();
        tasks.sort_by_key(|t| family_rank(t));
        let mut start = 0;
        while start < tasks.len() {
            let family = family_rank(tasks[start]);
            let end = tasks[start..]
                .iter()
                .position(|t| family_rank(t) != family)
                .map_or(tasks.len(), |p| start + p);
            let group = &tasks[start..end];
            start = end;

            let mut columns: BTreeSet<&String> = BTreeSet::new();
            for t in group {
                columns.extend(self.metrics[*t].keys());
            }
            let mut columns: Vec<&String> = columns.into_iter().collect();
            columns.sort_by_key(|k| metric_order(k));

            let name_w = group.iter().map(|t| t.len()).max().unwrap_or(4).max(4);
            let col_w: Vec<usize> = columns.iter().map(|c| c.len().max(6)).collect();

            out.push('\n');
            let _ = write!(out, "{:<name_w$}  {:>5}", "task", "n");
            for (c, w) in columns.iter().zip(&col_w) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
            for t in group {
                let n = self
                    .task_counts
                    .get(*t)
                    .map_or_else(|| "-".to_string(), |n| n.to_string());
                let _ = write!(out, "{t:<name_w$}  {n:>5}");
                for (c, w) in columns.iter().zip(&col_w) {
                    match self.metrics[*t].get(*c) {
                        Some(v) => {
                            let _ = write!(out, "  {v:>w$.4}");
                        }
                        None => {
                            let _ = write!(out, "  {:>w$}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}
