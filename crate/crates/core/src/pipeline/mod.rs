//! The two-step scale-grounded pipeline.
//!
//! Step 1: the poster role completes the mental scale for a post; the
//! discriminator verifies the completion and can send it back with a
//! critique. Step 2: the analysis role classifies the post from the
//! completed scale; the discriminator checks that decision for
//! over-inference. Each post yields one [`FinalRecord`].

mod engine;
mod evidence;
mod parse;
mod prompts;
mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use engine::{Pipeline, PipelineConfig, PipelineError, StageOutcome};
pub use evidence::{normalize_for_match, quote_in_post, verify_evidence};
pub use parse::{
    parse_label, parse_scale_response, parse_verdict, LabelParseFailure, ParseFailure,
};
pub use prompts::{
    build_analysis_discriminator_prompt, build_scale_discriminator_prompt, build_step1_prompt,
    build_step1_repair_prompt, build_step2_prompt, build_step2_repair_prompt,
    render_completed_scale, render_scale_items,
};
pub use trace::{read_traces, write_traces, TraceError, TRACE_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionCategory {
    DirectMention,
    IndirectMention,
    NoMention,
}

impl MentionCategory {
    pub fn token(self) -> &'static str {
        match self {
            MentionCategory::DirectMention => "direct_mention",
            MentionCategory::IndirectMention => "indirect_mention",
            MentionCategory::NoMention => "no_mention",
        }
    }

    /// Canonical tokens plus the spellings models commonly produce,
    /// including `directly_mention`.
    pub fn from_token(raw: &str) -> Option<Self> {
        let t: String = raw
            .trim()
            .trim_matches(|c: char| c == '\'' || c == '"' || c == '`' || c == '*')
            .to_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        match t.as_str() {
            "direct_mention" | "directly_mention" | "directly_mentioned" | "direct_mentioned"
            | "direct" | "directly" => Some(MentionCategory::DirectMention),
            "indirect_mention"
            | "indirectly_mention"
            | "indirectly_mentioned"
            | "indirect_mentioned"
            | "indirect"
            | "indirectly" => Some(MentionCategory::IndirectMention),
            "no_mention" | "not_mention" | "not_mentioned" | "no_mentioned" | "none" | "not"
            | "no" => Some(MentionCategory::NoMention),
            _ => None,
        }
    }
}

impl fmt::Display for MentionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResponse {
    pub item_id: String,
    pub mention: MentionCategory,
    pub selected_option: Option<String>,
    pub rationale: String,
    pub evidence_quotes: Vec<String>,
    pub evidence_verified: Vec<bool>,
}

/// A completed scale for one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleResponse {
    pub scale_id: String,
    pub post_id: String,
    pub items: Vec<ItemResponse>,
    pub attempts: u32,
    pub verdict_history: Vec<Verdict>,
}

impl ScaleResponse {
    pub fn unverified_quotes(&self) -> impl Iterator<Item = (&str, &str)> {
        self.items.iter().flat_map(|i| {
            i.evidence_quotes
                .iter()
                .zip(&i.evidence_verified)
                .filter(|(_, ok)| !**ok)
                .map(move |(q, _)| (i.item_id.as_str(), q.as_str()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scale,
    Analysis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemIssue {
    pub item_id: String,
    pub issue: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub stage: Stage,
    pub accepted: bool,
    pub critique: String,
    pub item_issues: Vec<ItemIssue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub label: String,
    pub explanation: String,
    pub cited_items: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    NoScale,
    NoDiscriminator,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::NoScale, Mode::NoDiscriminator];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoScale => "no_scale",
            Mode::NoDiscriminator => "no_discriminator",
        }
    }

    pub fn uses_scale(self) -> bool {
        self != Mode::NoScale
    }

    pub fn uses_discriminator(self) -> bool {
        self != Mode::NoDiscriminator
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown mode {s:?} (expected full, no_scale or no_discriminator)")
            })
    }
}

/// Ordered from best to worst; a record takes the worst status of its stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Accepted,
    AcceptedAfterRetry,
    ForcedAfterMaxRetries,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Accepted => "accepted",
            Status::AcceptedAfterRetry => "accepted_after_retry",
            Status::ForcedAfterMaxRetries => "forced_after_max_retries",
            Status::Failed => "failed",
        }
    }
}

/// Model calls made while processing one post, by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTally {
    pub poster: u32,
    pub analysis: u32,
    pub scale_discriminator: u32,
    pub analysis_discriminator: u32,
}

/// The only nondeterministic part of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub started_at: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub trace_schema_version: u32,
    pub post_id: String,
    pub post_text: String,
    pub mode: Mode,
    pub scale_response: Option<ScaleResponse>,
    pub analysis: AnalysisResult,
    pub verdicts: Vec<Verdict>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub calls: CallTally,
    pub meta: RecordMeta,
}
