//! Deterministic backend answering from a recorded table.
//!
//! The fixture file is a JSON array of entries:
//!
//! ```json
//! [{"image_id": "q1", "manipulation_text": "make the dog larger",
//!   "stage": "onestage", "response": "{...}"}]
//! ```
//!
//! `stage` is one of `onestage` (default), `caption` or `modify`. Caption
//! entries leave `manipulation_text` empty.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendFailure, BackendRequest, GatewayError, MllmBackend, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub image_id: String,
    #[serde(default)]
    pub manipulation_text: String,
    #[serde(default)]
    pub stage: Stage,
    pub response: String,
}

type FixtureKey = (Stage, String, String);

pub struct FixtureBackend {
    name: String,
    responses: HashMap<FixtureKey, String>,
    calls: AtomicUsize,
}

impl FixtureBackend {
    pub fn new(
        name: impl Into<String>,
        entries: impl IntoIterator<Item = FixtureEntry>,
    ) -> Result<Self, GatewayError> {
        let mut responses = HashMap::new();
        for entry in entries {
            let key = (
                entry.stage,
                entry.image_id.clone(),
                entry.manipulation_text.trim().to_string(),
            );
            if responses.insert(key, entry.response).is_some() {
                return Err(GatewayError::Config(format!(
                    "duplicate fixture entry for ({}, {:?}, {})",
                    entry.image_id, entry.manipulation_text, entry.stage
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            responses,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn from_json(name: impl Into<String>, json: &str) -> Result<Self, GatewayError> {
        let entries: Vec<FixtureEntry> = serde_json::from_str(json)
            .map_err(|e| GatewayError::Config(format!("invalid fixture file: {e}")))?;
        Self::new(name, entries)
    }

    pub fn from_file(name: impl Into<String>, path: &Path) -> Result<Self, GatewayError> {
        let json = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        Self::from_json(name, &json)
    }

    /// Number of `send` calls so far, answered or not.
    pub fn invocations(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn responses(&self) -> impl Iterator<Item = &str> {
        self.responses.values().map(String::as_str)
    }
}

impl MllmBackend for FixtureBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports_images(&self) -> bool {
        true
    }

    fn send(&self, request: &BackendRequest) -> Result<String, BackendFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let ctx = &request.context;
        let key = (
            ctx.stage,
            ctx.image_id.clone(),
            ctx.manipulation_text.trim().to_string(),
        );
        self.responses.get(&key).cloned().ok_or_else(|| {
            BackendFailure::Fatal(format!(
                "no fixture response for image `{}`, text {:?}, stage {}",
                ctx.image_id, ctx.manipulation_text, ctx.stage
            ))
        })
    }
}
