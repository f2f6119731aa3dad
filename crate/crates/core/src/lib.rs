//! Scale-grounded mental-health classification with LLM roles.
//!
//! A poster model completes a mental scale from a social-media post, a
//! discriminator verifies the completion, an analysis model classifies the
//! post from the completed scale, and the discriminator verifies that
//! decision. The crate also provides the corpus/scale loaders, the cached
//! backend layer and the evaluation harness.

pub mod corpus;
pub mod eval;
pub mod llm;
pub mod pipeline;
pub mod scales;
pub mod templates;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use corpus::{load_corpus, load_task, take_prefix, Corpus, CorpusError, Post, TaskSpec};
pub use eval::{
    accuracy, evaluate, run_ablation, weighted_f1, AblationReport, ConfusionCounts, EvalError,
    EvalReport,
};
pub use llm::{
    cache_key, record_script, Backend, BackendSpec, Completion, DiskCache, LlmError, MockScript,
    RetryPolicy, Role, RoleConfig,
};
pub use pipeline::{
    AnalysisResult, FinalRecord, ItemResponse, MentionCategory, Mode, Pipeline, PipelineConfig,
    ScaleResponse, Status, Verdict,
};
pub use scales::{load_scale, score_scale, validate_scale, MentalScale, ScaleError};
pub use templates::PromptTemplates;

/// Hex SHA-256 of the compact JSON serialization of `value`.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
    hex::encode(Sha256::digest(&bytes))
}
