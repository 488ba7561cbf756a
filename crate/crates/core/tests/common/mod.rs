//! Reference implementations used as test oracles. Written without calling
//! into the crate's own scoring, metric or embedding code.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use cir_core::index::Gallery;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Full-sort retrieval over the gallery's stored rows: f64 dot products,
/// score descending, id ascending.
pub fn oracle_ranking(gallery: &Gallery, query: &[f64], k: usize) -> Vec<(String, f64)> {
    let norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    let unit: Vec<f64> = query.iter().map(|x| x / norm).collect();
    let mut all: Vec<(String, f64)> = gallery
        .ids()
        .iter()
        .map(|id| {
            let row = gallery.vector(id).unwrap();
            let score = row
                .iter()
                .zip(&unit)
                .fold(0.0f64, |acc, (&a, &b)| acc + f64::from(a) * b);
            (id.clone(), score)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Average precision recomputed from scratch at every prefix.
pub fn oracle_ap(ranked: &[String], gt: &BTreeSet<String>, k: usize) -> f64 {
    let depth = k.min(ranked.len());
    let mut total = 0.0;
    for i in 1..=depth {
        if !gt.contains(&ranked[i - 1]) {
            continue;
        }
        let relevant_in_prefix = ranked[..i].iter().filter(|id| gt.contains(*id)).count();
        total += relevant_in_prefix as f64 / i as f64;
    }
    total / (k.min(gt.len()) as f64)
}

pub fn oracle_recall(ranked: &[String], gt: &BTreeSet<String>, k: usize) -> f64 {
    let depth = k.min(ranked.len());
    if (0..depth).any(|i| gt.contains(&ranked[i])) {
        1.0
    } else {
        0.0
    }
}

/// Mock embedder re-derived from its definition: FNV-1a 64 seed, SplitMix64
/// outputs at counters 1, 2, ..., 53-bit uniforms in (0, 1], Box-Muller pairs.
pub fn oracle_mock_vector(text: &str, dim: usize) -> Vec<f64> {
    const OFFSET: u64 = 14695981039346656037;
    const PRIME: u64 = 1099511628211;
    const GAMMA: u64 = 0x9E3779B97F4A7C15;

    let mut seed = OFFSET;
    for byte in text.bytes() {
        seed = (seed ^ byte as u64).wrapping_mul(PRIME);
    }
    let draw = |n: u64| -> f64 {
        let mut z = seed.wrapping_add(GAMMA.wrapping_mul(n));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        ((z >> 11) as f64 + 1.0) * 2f64.powi(-53)
    };
    let mut out = Vec::new();
    let mut n = 1;
    while out.len() < dim {
        let (u1, u2) = (draw(n), draw(n + 1));
        n += 2;
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        out.push(radius * angle.cos());
        out.push(radius * angle.sin());
    }
    out.truncate(dim);
    out
}

pub fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}
