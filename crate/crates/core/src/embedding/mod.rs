//! Text and image embeddings behind one provider interface.
//!
//! Embeddings carry `f64` values so normalization is exact to well below the
//! tolerances the retrieval layer relies on. Stores keep `f32` on disk.

mod http;
mod mock;
mod store;

pub use http::{HttpEmbeddingConfig, HttpEmbeddingProvider};
pub use mock::{fnv1a64, MockProvider};
pub use store::{load_store, save_store, EmbeddingStore, StoreManifest, MANIFEST_FILE, VECTORS_FILE};

use crate::prompting::ReferenceImage;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("{0}")]
    Input(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("provider `{provider}` failed: {message}")]
    Provider { provider: String, message: String },
    #[error("expected dimension {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("corrupt embedding store: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn from_f32(values: &[f32]) -> Self {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Unit-length copy of `e`. Zero, non-finite or empty vectors are rejected.
pub fn normalize(e: &Embedding) -> Result<Embedding, EmbeddingError> {
    if e.values.is_empty() {
        return Err(EmbeddingError::Degenerate("empty vector".into()));
    }
    let norm = e.norm();
    if norm == 0.0 {
        return Err(EmbeddingError::Degenerate("zero-norm vector".into()));
    }
    if !norm.is_finite() {
        return Err(EmbeddingError::Degenerate("non-finite vector".into()));
    }
    Ok(Embedding {
        values: e.values.iter().map(|v| v / norm).collect(),
        normalized: true,
    })
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError>;

    fn embed_image(&self, image: &ReferenceImage) -> Result<Embedding, EmbeddingError>;
}

/// Validated text embedding: rejects empty text and checks the dimension.
pub fn embed_text(provider: &dyn EmbeddingProvider, text: &str) -> Result<Embedding, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::Input("cannot embed empty text".into()));
    }
    check_dim(provider, provider.embed_text(text)?)
}

pub fn embed_image(
    provider: &dyn EmbeddingProvider,
    image: &ReferenceImage,
) -> Result<Embedding, EmbeddingError> {
    if image.id.is_empty() {
        return Err(EmbeddingError::Input("image id is empty".into()));
    }
    check_dim(provider, provider.embed_image(image)?)
}

fn check_dim(provider: &dyn EmbeddingProvider, e: Embedding) -> Result<Embedding, EmbeddingError> {
    if e.dim() != provider.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: provider.dim(),
            got: e.dim(),
        });
    }
    Ok(e)
}
