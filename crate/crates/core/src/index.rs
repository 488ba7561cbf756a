//! Exact cosine-similarity retrieval over an immutable gallery.
//!
//! Gallery vectors are normalized once at build time and stored row-major as
//! `f32`, sorted by candidate id. A query is normalized, scored against every
//! row by dot product, and the best `k` rows are kept with a bounded heap.
//! Ranking is by descending score with ties broken by ascending candidate
//! id; because rows are id-sorted, that is ascending row index.
//!
//! With the `parallel` feature, large galleries are scanned in chunks on the
//! rayon pool and the per-chunk winners are merged under the same total
//! order, so results do not depend on the execution mode.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{normalize, Embedding, EmbeddingError, EmbeddingStore};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per parallel work unit.
#[cfg(feature = "parallel")]
const CHUNK_ROWS: usize = 4096;

/// Galleries smaller than this are always scanned sequentially.
pub const PARALLEL_MIN_ROWS: usize = 16_384;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build gallery at `{id}`: {reason}")]
    Build { id: String, reason: String },
    #[error("query has dimension {got}, gallery has {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("degenerate query: {0}")]
    Degenerate(String),
    #[error("unknown candidate id `{0}`")]
    UnknownId(String),
    #[error("{0}")]
    Input(String),
}

/// Precision of the dot-product accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accumulation {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Chunked scan on the rayon pool for large galleries. Falls back to
    /// sequential without the `parallel` feature.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchConfig {
    pub accumulation: Accumulation,
    pub execution: Execution,
}

impl SearchConfig {
    pub fn sequential() -> Self {
        Self {
            execution: Execution::Sequential,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub k: usize,
    pub ranked: Vec<ScoredCandidate>,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<&str> {
        self.ranked.iter().map(|c| c.id.as_str()).collect()
    }

    /// Best match, the retrieved target image.
    pub fn top(&self) -> Option<&ScoredCandidate> {
        self.ranked.first()
    }

    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = id.into();
        self
    }
}

#[derive(Debug, Clone)]
pub struct Gallery {
    provider_name: String,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, u32>,
}

impl Gallery {
    /// Normalizes and sorts `entries`. `dim` is required only to give an
    /// empty gallery a dimension; otherwise it is checked against the entries.
    pub fn build(
        provider_name: impl Into<String>,
        dim: Option<usize>,
        entries: impl IntoIterator<Item = (String, Embedding)>,
    ) -> Result<Self, IndexError> {
        let mut rows: Vec<(String, Vec<f32>)> = Vec::new();
        let mut expected_dim = dim;
        let mut seen = HashSet::new();
        for (id, embedding) in entries {
            let expected = *expected_dim.get_or_insert(embedding.dim());
            if embedding.dim() != expected || expected == 0 {
                return Err(IndexError::Build {
                    id,
                    reason: format!("dimension {} does not match {expected}", embedding.dim()),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(IndexError::Build {
                    id,
                    reason: "duplicate id".into(),
                });
            }
            let unit = normalize(&embedding).map_err(|e| IndexError::Build {
                id: id.clone(),
                reason: e.to_string(),
            })?;
            rows.push((id, unit.to_f32()));
        }
        rows.sort_unstable_by(|a, b| a.0.cmp(&b.0));

        let dim = expected_dim.unwrap_or(0);
        if rows.len() > u32::MAX as usize {
            return Err(IndexError::Input("gallery too large".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut ids = Vec::with_capacity(rows.len());
        for (id, row) in rows {
            data.extend_from_slice(&row);
            ids.push(id);
        }
        let positions = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(Self {
            provider_name: provider_name.into(),
            dim,
            ids,
            data,
            positions,
        })
    }

    pub fn from_store(store: &EmbeddingStore) -> Result<Self, IndexError> {
        Self::build(
            store.provider.clone(),
            Some(store.dim),
            store
                .records
                .iter()
                .map(|(id, v)| (id.clone(), Embedding::from_f32(v))),
        )
    }

    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Candidate ids in ascending order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// Stored unit vector of `id`.
    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.row(i as usize))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn prepare(&self, query: &Embedding) -> Result<PreparedQuery, IndexError> {
        if !self.is_empty() && query.dim() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let unit = normalize(query).map_err(|e| match e {
            EmbeddingError::Degenerate(m) => IndexError::Degenerate(m),
            other => IndexError::Input(other.to_string()),
        })?;
        Ok(PreparedQuery {
            f32: unit.to_f32(),
            f64: unit.into_values(),
        })
    }

    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<RetrievalResult, IndexError> {
        self.top_k_with(query, k, SearchConfig::default())
    }

    pub fn top_k_with(
        &self,
        query: &Embedding,
        k: usize,
        config: SearchConfig,
    ) -> Result<RetrievalResult, IndexError> {
        if k == 0 {
            return Err(IndexError::Input("k must be positive".into()));
        }
        let prepared = self.prepare(query)?;
        let hits = if self.is_empty() {
            Vec::new()
        } else {
            self.select(&prepared, k, config)
        };
        Ok(self.result(k, hits))
    }

    /// Top-k for many queries. Queries run in parallel with the `parallel`
    /// feature; each scan is sequential. Output order follows `queries`.
    pub fn top_k_batch(
        &self,
        queries: &[Embedding],
        k: usize,
        accumulation: Accumulation,
    ) -> Vec<Result<RetrievalResult, IndexError>> {
        let config = SearchConfig {
            accumulation,
            execution: Execution::Sequential,
        };
        #[cfg(feature = "parallel")]
        {
            queries
                .par_iter()
                .map(|q| self.top_k_with(q, k, config))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            queries.iter().map(|q| self.top_k_with(q, k, config)).collect()
        }
    }

    /// Full ranking of `subset_ids` only.
    pub fn rank_subset<S: AsRef<str>>(
        &self,
        query: &Embedding,
        subset_ids: &[S],
    ) -> Result<RetrievalResult, IndexError> {
        let mut rows = Vec::with_capacity(subset_ids.len());
        let mut seen = HashSet::with_capacity(subset_ids.len());
        for id in subset_ids {
            let id = id.as_ref();
            let &row = self
                .positions
                .get(id)
                .ok_or_else(|| IndexError::UnknownId(id.to_string()))?;
            if !seen.insert(row) {
                return Err(IndexError::Input(format!("subset lists `{id}` twice")));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Ok(self.result(0, Vec::new()));
        }
        let prepared = self.prepare(query)?;
        let mut hits: Vec<Hit> = rows
            .into_iter()
            .map(|idx| Hit {
                score: self.score(idx as usize, &prepared, Accumulation::F32),
                idx,
            })
            .collect();
        hits.sort_unstable();
        let k = hits.len();
        Ok(self.result(k, hits))
    }

    fn result(&self, k: usize, hits: Vec<Hit>) -> RetrievalResult {
        RetrievalResult {
            query_id: String::new(),
            k,
            ranked: hits
                .into_iter()
                .map(|h| ScoredCandidate {
                    id: self.ids[h.idx as usize].clone(),
                    score: h.score,
                })
                .collect(),
        }
    }

    fn score(&self, i: usize, q: &PreparedQuery, acc: Accumulation) -> f64 {
        let row = self.row(i);
        let s = match acc {
            Accumulation::F32 => f64::from(dot_f32(row, &q.f32)),
            Accumulation::F64 => dot_f64(row, &q.f64),
        };
        s + 0.0
    }

    fn select(&self, q: &PreparedQuery, k: usize, config: SearchConfig) -> Vec<Hit> {
        #[cfg(feature = "parallel")]
        if config.execution == Execution::Parallel && self.len() >= PARALLEL_MIN_ROWS {
            let mut merged: Vec<Hit> = (0..self.len().div_ceil(CHUNK_ROWS))
                .into_par_iter()
                .flat_map_iter(|chunk| {
                    let start = chunk * CHUNK_ROWS;
                    let end = (start + CHUNK_ROWS).min(self.len());
                    self.select_range(q, k, config.accumulation, start..end)
                })
                .collect();
            merged.sort_unstable();
            merged.truncate(k);
            return merged;
        }
        self.select_range(q, k, config.accumulation, 0..self.len())
    }

    fn select_range(
        &self,
        q: &PreparedQuery,
        k: usize,
        acc: Accumulation,
        rows: std::ops::Range<usize>,
    ) -> Vec<Hit> {
        let mut heap: BinaryHeap<Hit> = BinaryHeap::with_capacity(k.min(rows.len()) + 1);
        for i in rows {
            let hit = Hit {
                score: self.score(i, q, acc),
                idx: i as u32,
            };
            if heap.len() < k {
                heap.push(hit);
            } else if let Some(mut worst) = heap.peek_mut() {
                if hit < *worst {
                    *worst = hit;
                }
            }
        }
        heap.into_sorted_vec()
    }
}

struct PreparedQuery {
    f32: Vec<f32>,
    f64: Vec<f64>,
}

/// Ordered so that `a < b` means `a` ranks ahead of `b`.
#[derive(Debug, Clone, Copy)]
struct Hit {
    score: f64,
    idx: u32,
}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Hit {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit {}

fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 8;
    let mut acc = [0f32; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for lane in 0..LANES {
            acc[lane] += x[lane] * y[lane];
        }
    }
    let tail: f32 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    acc.iter().sum::<f32>() + tail
}

fn dot_f64(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * y).sum()
}

/// Builds a gallery whose dimension is taken from the first entry.
pub fn build_gallery(
    entries: Vec<(String, Embedding)>,
    provider_name: &str,
) -> Result<Gallery, IndexError> {
    Gallery::build(provider_name, None, entries)
}
