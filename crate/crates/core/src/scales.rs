//! Machine-readable mental-scale definitions.
//!
//! A [`MentalScale`] is the blank questionnaire handed to the poster role:
//! an ordered list of items, each with a prompt, optional criteria text,
//! and at least two answer options. Scales are stored as one JSON document
//! per file; see `docs/formats.md` for the schema.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{MentionCategory, ScaleResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub code: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleItem {
    pub item_id: String,
    pub prompt: String,
    #[serde(default)]
    pub criteria: String,
    pub options: Vec<AnswerOption>,
}

impl ScaleItem {
    pub fn option(&self, code: &str) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentalScale {
    pub scale_id: String,
    pub name: String,
    #[serde(default)]
    pub version: String,
    #[serde(default)]
    pub description: String,
    pub items: Vec<ScaleItem>,
}

impl MentalScale {
    pub fn item(&self, item_id: &str) -> Option<&ScaleItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Lowest and highest attainable totals, or `None` when the scale is unvalued.
    pub fn total_range(&self) -> Option<(f64, f64)> {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for item in &self.items {
            let values: Option<Vec<f64>> = item.options.iter().map(|o| o.value).collect();
            let values = values?;
            lo += values.iter().copied().fold(f64::INFINITY, f64::min);
            hi += values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        Some((lo, hi))
    }
}

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("scale file not found: {0}")]
    FileNotFound(String),
    #[error("cannot read scale file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed scale: {}", .0.join("; "))]
    MalformedScale(Vec<String>),
}

/// Checks every scale invariant and returns one human-readable line per
/// violation. An empty list means the scale is valid.
pub fn validate_scale(scale: &MentalScale) -> Vec<String> {
    let mut violations = Vec::new();
    if scale.scale_id.trim().is_empty() {
        violations.push("scale: empty scale_id".to_string());
    }
    if scale.items.is_empty() {
        violations.push("scale: no items".to_string());
    }
    let mut seen = HashSet::new();
    for item in &scale.items {
        let id = &item.item_id;
        if id.trim().is_empty() {
            violations.push("item with empty item_id".to_string());
        }
        if !seen.insert(id.as_str()) {
            violations.push(format!("duplicate item id: {id}"));
        }
        if item.prompt.trim().is_empty() {
            violations.push(format!("item {id}: empty prompt"));
        }
        if item.options.len() < 2 {
            violations.push(format!("item {id}: fewer than 2 options"));
        }
        let mut codes = HashSet::new();
        for opt in &item.options {
            if !codes.insert(opt.code.as_str()) {
                violations.push(format!("item {id}: duplicate option code: {}", opt.code));
            }
            if opt.code.trim().is_empty() {
                violations.push(format!("item {id}: option with empty code"));
            }
            if opt.text.trim().is_empty() {
                violations.push(format!("item {id}: option {}: empty text", opt.code));
            }
            if opt.value.is_some_and(|v| !v.is_finite()) {
                violations.push(format!("item {id}: option {}: non-finite value", opt.code));
            }
        }
        let valued = item.options.iter().filter(|o| o.value.is_some()).count();
        if valued != 0 && valued != item.options.len() {
            violations.push(format!("item {id}: mixed valued and unvalued options"));
        }
    }
    violations
}

pub fn parse_scale(json: &str) -> Result<MentalScale, ScaleError> {
    let scale: MentalScale = serde_json::from_str(json)
        .map_err(|e| ScaleError::MalformedScale(vec![format!("invalid JSON: {e}")]))?;
    let violations = validate_scale(&scale);
    if violations.is_empty() {
        Ok(scale)
    } else {
        Err(ScaleError::MalformedScale(violations))
    }
}

pub fn load_scale(path: impl AsRef<Path>) -> Result<MentalScale, ScaleError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ScaleError::FileNotFound(path.display().to_string()),
        _ => ScaleError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        },
    })?;
    parse_scale(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub total: f64,
    pub answered_count: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("response is for scale {response}, not {scale}")]
    ScaleMismatch { response: String, scale: String },
    #[error("item {item_id}: unknown option {code}")]
    UnknownOption { item_id: String, code: String },
    #[error("unknown item {0}")]
    UnknownItem(String),
}

/// Sums the option values chosen for every item that the post mentions.
///
/// Returns `Ok(None)` when a selected option carries no numeric value.
pub fn score_scale(
    response: &ScaleResponse,
    scale: &MentalScale,
) -> Result<Option<ScoreSummary>, ScoreError> {
    if response.scale_id != scale.scale_id {
        return Err(ScoreError::ScaleMismatch {
            response: response.scale_id.clone(),
            scale: scale.scale_id.clone(),
        });
    }
    let mut total = 0.0;
    let mut answered_count = 0;
    let mut unvalued = false;
    for ir in &response.items {
        let item = scale
            .item(&ir.item_id)
            .ok_or_else(|| ScoreError::UnknownItem(ir.item_id.clone()))?;
        if ir.mention == MentionCategory::NoMention {
            continue;
        }
        let Some(code) = &ir.selected_option else {
            continue;
        };
        let opt = item.option(code).ok_or_else(|| ScoreError::UnknownOption {
            item_id: ir.item_id.clone(),
            code: code.clone(),
        })?;
        answered_count += 1;
        match opt.value {
            Some(v) => total += v,
            None => unvalued = true,
        }
    }
    if unvalued {
        return Ok(None);
    }
    Ok(Some(ScoreSummary {
        total,
        answered_count,
    }))
}
