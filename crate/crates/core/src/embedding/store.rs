//! On-disk embedding store.
//!
//! A store is a directory with two files:
//!
//! - `manifest.json`: `{"provider", "dim", "count", "byte_order": "le", "ids"}`
//! - `vectors.f32`: `count * dim` little-endian `f32`, record-major, in `ids` order

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const VECTORS_FILE: &str = "vectors.f32";
const BYTE_ORDER: &str = "le";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub provider: String,
    pub dim: usize,
    pub count: usize,
    pub byte_order: String,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub provider: String,
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
}

impl EmbeddingStore {
    pub fn new(provider: impl Into<String>, dim: usize) -> Self {
        Self {
            provider: provider.into(),
            dim,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::Corrupt("dimension is zero".into()));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        for (id, vector) in &self.records {
            if vector.len() != self.dim {
                return Err(EmbeddingError::Corrupt(format!(
                    "record `{id}` has length {}, manifest dim is {}",
                    vector.len(),
                    self.dim
                )));
            }
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::Corrupt(format!("duplicate id `{id}`")));
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> StoreManifest {
        StoreManifest {
            provider: self.provider.clone(),
            dim: self.dim,
            count: self.records.len(),
            byte_order: BYTE_ORDER.into(),
            ids: self.records.iter().map(|(id, _)| id.clone()).collect(),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> EmbeddingError + '_ {
    move |source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_store(store: &EmbeddingStore, dir: &Path) -> Result<(), EmbeddingError> {
    store.validate()?;
    fs::create_dir_all(dir).map_err(io_error(dir))?;

    let mut bytes = Vec::with_capacity(store.len() * store.dim * 4);
    for (_, vector) in &store.records {
        for v in vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let vectors_path = dir.join(VECTORS_FILE);
    fs::write(&vectors_path, bytes).map_err(io_error(&vectors_path))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = serde_json::to_string_pretty(&store.manifest())
        .expect("manifest always serializes");
    fs::write(&manifest_path, manifest).map_err(io_error(&manifest_path))?;
    Ok(())
}

pub fn load_store(dir: &Path) -> Result<EmbeddingStore, EmbeddingError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_error(&manifest_path))?;
    let manifest: StoreManifest = serde_json::from_str(&text)
        .map_err(|e| EmbeddingError::Corrupt(format!("{}: {e}", manifest_path.display())))?;

    if manifest.byte_order != BYTE_ORDER {
        return Err(EmbeddingError::Corrupt(format!(
            "unsupported byte order `{}`",
            manifest.byte_order
        )));
    }
    if manifest.ids.len() != manifest.count {
        return Err(EmbeddingError::Corrupt(format!(
            "manifest lists {} ids but count is {}",
            manifest.ids.len(),
            manifest.count
        )));
    }

    let vectors_path = dir.join(VECTORS_FILE);
    let bytes = fs::read(&vectors_path).map_err(io_error(&vectors_path))?;
    let expected = manifest.count * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(EmbeddingError::Corrupt(format!(
            "vector file has {} bytes, expected {expected} ({} x {} x 4)",
            bytes.len(),
            manifest.count,
            manifest.dim
        )));
    }

    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let records = if manifest.dim == 0 {
        Vec::new()
    } else {
        manifest
            .ids
            .into_iter()
            .zip(values.chunks_exact(manifest.dim).map(<[f32]>::to_vec))
            .collect()
    };
    let store = EmbeddingStore {
        provider: manifest.provider,
        dim: manifest.dim,
        records,
    };
    store.validate()?;
    Ok(store)
}
