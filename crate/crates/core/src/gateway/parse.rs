//! Parsing of model answers into a [`ReasoningTrace`].
//!
//! Models decorate their JSON, so parsing walks a repair ladder: the whole
//! answer as JSON, then the contents of the first code fence, then the first
//! balanced `{...}` object found in the surrounding prose. Keys are matched
//! case-insensitively, with spaces, underscores and hyphens interchangeable.

use serde_json::{Map, Value};

use super::{GatewayError, ReasoningTrace};
use crate::prompting::StepKind;

pub fn parse_response(raw: &str) -> Result<ReasoningTrace, GatewayError> {
    if raw.trim().is_empty() {
        return Err(GatewayError::Parse {
            message: "empty response".into(),
            raw: raw.to_string(),
        });
    }
    let object = extract_object(raw).ok_or_else(|| GatewayError::Parse {
        message: "no JSON object found".into(),
        raw: raw.to_string(),
    })?;

    let mut fields: [Option<String>; 4] = Default::default();
    for (key, value) in object {
        let normalized = normalize_key(&key);
        if let Some(pos) = StepKind::ALL
            .iter()
            .position(|s| s.header().to_ascii_lowercase() == normalized)
        {
            fields[pos] = Some(value_text(value));
        }
    }

    let mut missing: Vec<String> = StepKind::ALL
        .iter()
        .zip(&fields)
        .filter(|(_, f)| f.is_none())
        .map(|(s, _)| s.header().to_string())
        .collect();
    let target_blank = fields[3].as_deref().is_some_and(|t| t.trim().is_empty());
    if target_blank {
        missing.push(StepKind::TargetImageDescription.header().to_string());
    }
    if !missing.is_empty() {
        return Err(GatewayError::Schema {
            missing,
            raw: raw.to_string(),
        });
    }

    let [original, thoughts, reflections, target] = fields.map(Option::unwrap_or_default);
    Ok(ReasoningTrace {
        original_image_description: original,
        thoughts,
        reflections,
        target_image_description: target.trim().to_string(),
        raw_response: raw.to_string(),
        backend_name: String::new(),
    })
}

fn extract_object(raw: &str) -> Option<Map<String, Value>> {
    as_object(raw.trim())
        .or_else(|| fenced_block(raw).and_then(as_object))
        .or_else(|| first_balanced_object(raw))
}

fn as_object(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

/// Body of the first ``` fence, minus an optional language tag.
fn fenced_block(raw: &str) -> Option<&str> {
    let start = raw.find("```")?;
    let after = &raw[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

fn first_balanced_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut search_from = 0;
    while let Some(offset) = raw[search_from..].find('{') {
        let start = search_from + offset;
        if let Some(end) = balanced_end(bytes, start) {
            if let Some(map) = as_object(&raw[start..=end]) {
                return Some(map);
            }
        }
        search_from = start + 1;
    }
    None
}

/// Index of the brace closing the one at `start`, skipping string contents.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn normalize_key(key: &str) -> String {
    key.to_ascii_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn value_text(value: Value) -> String {
    match value {
        Value::String(s) => s,
        Value::Null => String::new(),
        other => other.to_string(),
    }
}
