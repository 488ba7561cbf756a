//! Deterministic stand-in for a neural encoder.
//!
//! The input string is hashed with 64-bit FNV-1a to a seed. Draw `c`
//! (counting from 0) is SplitMix64's output function applied to
//! `seed + (c + 1) * 0x9E3779B97F4A7C15`, and its top 53 bits give a uniform
//! `u = (bits + 1) / 2^53` in `(0, 1]`. Each pair of draws `(u1, u2)` becomes
//! two standard normals by Box-Muller: `r cos(2 pi u2)` and `r sin(2 pi u2)`
//! with `r = sqrt(-2 ln u1)`. An odd dimension drops the last sine term.
//!
//! Images are embedded as the text of their `embed_key`, or of the hex
//! SHA-256 of their bytes when no key is set.

use super::{Embedding, EmbeddingError, EmbeddingProvider};
use crate::digest::sha256_hex;
use crate::prompting::{ImagePayload, ReferenceImage};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct MockProvider {
    name: String,
    dim: usize,
}

impl MockProvider {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            name: name.into(),
            dim,
        }
    }

    fn vector_for(&self, key: &str) -> Vec<f64> {
        let seed = fnv1a64(key.as_bytes());
        let mut out = Vec::with_capacity(self.dim);
        let mut counter = 0u64;
        while out.len() < self.dim {
            let u1 = uniform(seed, counter);
            let u2 = uniform(seed, counter + 1);
            counter += 2;
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = std::f64::consts::TAU * u2;
            out.push(r * theta.cos());
            if out.len() < self.dim {
                out.push(r * theta.sin());
            }
        }
        out
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform(seed: u64, counter: u64) -> f64 {
    let bits = mix(seed.wrapping_add((counter + 1).wrapping_mul(GOLDEN_GAMMA))) >> 11;
    (bits + 1) as f64 / (1u64 << 53) as f64
}

impl EmbeddingProvider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::Input("cannot embed empty text".into()));
        }
        Ok(Embedding::new(self.vector_for(text)))
    }

    fn embed_image(&self, image: &ReferenceImage) -> Result<Embedding, EmbeddingError> {
        if let Some(key) = &image.embed_key {
            return self.embed_text(key);
        }
        match &image.payload {
            ImagePayload::Missing => Err(EmbeddingError::Input(format!(
                "image `{}` has neither payload nor embed key",
                image.id
            ))),
            _ => {
                let bytes = image
                    .resolve_bytes()
                    .map_err(|e| EmbeddingError::Input(e.to_string()))?;
                self.embed_text(&sha256_hex(bytes))
            }
        }
    }
}
