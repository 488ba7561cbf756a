//! Building a gallery store from a list of images.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::embedding::{embed_image, EmbeddingProvider, EmbeddingStore};
use crate::prompting::ReferenceImage;
use crate::CirError;

/// One gallery image. `embed_key` stands in for the image content with mock
/// providers; `image` is a path relative to the items file.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalleryItem {
    pub id: String,
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub embed_key: Option<String>,
}

impl GalleryItem {
    pub fn reference_image(&self) -> ReferenceImage {
        let image = match &self.image {
            Some(path) => ReferenceImage::from_file(self.id.clone(), path),
            None => ReferenceImage::without_payload(self.id.clone()),
        };
        match &self.embed_key {
            Some(key) => image.with_embed_key(key.clone()),
            None => image,
        }
    }
}

/// Reads a JSONL items file.
pub fn load_items(path: &Path) -> Result<Vec<GalleryItem>, CirError> {
    let text = std::fs::read_to_string(path).map_err(|e| CirError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut item: GalleryItem = serde_json::from_str(line).map_err(|e| {
            CirError::Config(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        if item.image.is_none() && item.embed_key.is_none() {
            return Err(CirError::Config(format!(
                "gallery item `{}` has neither image nor embed_key",
                item.id
            )));
        }
        if !seen.insert(item.id.clone()) {
            return Err(CirError::Config(format!("gallery item `{}` is listed twice", item.id)));
        }
        if let Some(p) = &mut item.image {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        items.push(item);
    }
    Ok(items)
}

pub fn build_store(
    provider: &dyn EmbeddingProvider,
    items: &[GalleryItem],
) -> Result<EmbeddingStore, CirError> {
    let mut store = EmbeddingStore::new(provider.name(), provider.dim());
    for item in items {
        let embedding = embed_image(provider, &item.reference_image())?;
        store.records.push((item.id.clone(), embedding.to_f32()));
    }
    store.validate()?;
    Ok(store)
}
