use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{Corpus, Post, TaskSpec};
use crate::llm::{Backend, LlmError, Role};
use crate::scales::MentalScale;
use crate::templates::PromptTemplates;

use super::parse::{parse_label, parse_scale_response, parse_verdict};
use super::prompts::{
    build_analysis_discriminator_prompt, build_scale_discriminator_prompt, build_step1_prompt,
    build_step1_repair_prompt, build_step2_prompt, build_step2_repair_prompt,
};
use super::{
    AnalysisResult, CallTally, FinalRecord, Mode, RecordMeta, ScaleResponse, Stage, Status,
    Verdict, TRACE_SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Discriminator rejections tolerated per stage before the last attempt is forced through.
    pub max_retries: u32,
    pub workers: usize,
    pub templates: PromptTemplates,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: Mode::Full,
            max_retries: 2,
            workers: 4,
            templates: PromptTemplates::defaults(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("pipeline failure: {0}")]
    PipelineFailure(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    FirstPass,
    AfterRetry,
    Forced,
}

impl StageOutcome {
    fn status(self) -> Status {
        match self {
            StageOutcome::FirstPass => Status::Accepted,
            StageOutcome::AfterRetry => Status::AcceptedAfterRetry,
            StageOutcome::Forced => Status::ForcedAfterMaxRetries,
        }
    }

    fn after(attempt: u32) -> Self {
        if attempt == 1 {
            StageOutcome::FirstPass
        } else {
            StageOutcome::AfterRetry
        }
    }
}

struct AnalysisStep {
    result: AnalysisResult,
    verdicts: Vec<Verdict>,
    outcome: StageOutcome,
    failure: Option<String>,
}

fn join_critiques(critiques: &[String]) -> Option<String> {
    match critiques {
        [] => None,
        [only] => Some(only.clone()),
        many => Some(
            many.iter()
                .enumerate()
                .map(|(i, c)| format!("Review {}: {}", i + 1, c))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
    }
}

fn cited_items(explanation: &str, scale: Option<&MentalScale>) -> Vec<String> {
    use regex::Regex;
    use std::sync::LazyLock;
    static ITEM_REF: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(
            r"(?i)\b(?:items?|questions?)\s*#?\s*([0-9A-Za-z_.\-]+(?:\s*(?:,|and|&)\s*#?[0-9][0-9A-Za-z_.\-]*)*)",
        )
        .expect("valid regex")
    });
    let Some(scale) = scale else {
        return Vec::new();
    };
    let mut out: Vec<String> = Vec::new();
    for caps in ITEM_REF.captures_iter(explanation) {
        for raw in caps[1].split([',', '&']).flat_map(|s| s.split(" and ")) {
            let id = raw.trim().trim_start_matches('#').trim_end_matches('.');
            if scale.item(id).is_some() && !out.iter().any(|o| o == id) {
                out.push(id.to_string());
            }
        }
    }
    out
}

/// Runs posts through the configured mode against one [`Backend`].
pub struct Pipeline<'a> {
    backend: &'a Backend,
    config: &'a PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a Backend, config: &'a PipelineConfig) -> Self {
        Pipeline { backend, config }
    }

    fn call(&self, role: Role, prompt: &str) -> Result<String, LlmError> {
        self.backend.complete(role, prompt).map(|c| c.text)
    }

    /// Step 1: poster completion, one repair re-ask on unparseable output,
    /// and the discriminator loop. Returns the last response with
    /// [`StageOutcome::Forced`] once `max_retries` rejections are used up.
    pub fn complete_scale(
        &self,
        post: &Post,
        scale: &MentalScale,
        tally: &mut CallTally,
    ) -> Result<(ScaleResponse, StageOutcome), PipelineError> {
        let templates = &self.config.templates;
        let mut critiques: Vec<String> = Vec::new();
        let mut verdicts: Vec<Verdict> = Vec::new();
        let mut last: Option<ScaleResponse> = None;

        for attempt in 1..=self.config.max_retries + 1 {
            let critique = join_critiques(&critiques);
            let prompt = build_step1_prompt(templates, post, scale, critique.as_deref());
            tally.poster += 1;
            let raw = self.call(Role::Poster, &prompt)?;
            let mut response = match parse_scale_response(&raw, scale, post) {
                Ok(r) => r,
                Err(failure) => {
                    let repair = build_step1_repair_prompt(
                        templates,
                        post,
                        scale,
                        &raw,
                        &failure.to_string(),
                    );
                    tally.poster += 1;
                    let raw = self.call(Role::Poster, &repair)?;
                    parse_scale_response(&raw, scale, post).map_err(|f| {
                        PipelineError::PipelineFailure(format!(
                            "scale completion unparseable after repair:\n{f}"
                        ))
                    })?
                }
            };
            response.attempts = attempt;

            if !self.config.mode.uses_discriminator() {
                return Ok((response, StageOutcome::FirstPass));
            }

            let verdict =
                self.discriminate_scale(post, scale, &response, critique.as_deref(), tally)?;
            verdicts.push(verdict.clone());
            response.verdict_history = verdicts.clone();
            if verdict.accepted {
                return Ok((response, StageOutcome::after(attempt)));
            }
            critiques.push(verdict.critique);
            last = Some(response);
        }
        Ok((
            last.expect("at least one attempt ran"),
            StageOutcome::Forced,
        ))
    }

    pub fn discriminate_scale(
        &self,
        post: &Post,
        scale: &MentalScale,
        response: &ScaleResponse,
        previous_feedback: Option<&str>,
        tally: &mut CallTally,
    ) -> Result<Verdict, LlmError> {
        let prompt = build_scale_discriminator_prompt(
            &self.config.templates,
            post,
            scale,
            response,
            previous_feedback,
        );
        tally.scale_discriminator += 1;
        let raw = self.call(Role::Discriminator, &prompt)?;
        Ok(parse_verdict(&raw, Stage::Scale))
    }

    pub fn discriminate_analysis(
        &self,
        post: &Post,
        completed: Option<(&ScaleResponse, &MentalScale)>,
        task: &TaskSpec,
        result: &AnalysisResult,
        previous_feedback: Option<&str>,
        tally: &mut CallTally,
    ) -> Result<Verdict, LlmError> {
        let prompt = build_analysis_discriminator_prompt(
            &self.config.templates,
            post,
            completed,
            task,
            result,
            previous_feedback,
        );
        tally.analysis_discriminator += 1;
        let raw = self.call(Role::Discriminator, &prompt)?;
        Ok(parse_verdict(&raw, Stage::Analysis))
    }

    /// Step 2. A rejection re-runs only this step, with the critique.
    fn analyze(
        &self,
        post: &Post,
        completed: Option<(&ScaleResponse, &MentalScale)>,
        task: &TaskSpec,
        tally: &mut CallTally,
    ) -> Result<AnalysisStep, LlmError> {
        let templates = &self.config.templates;
        let scale = completed.map(|(_, s)| s);
        let mut critiques: Vec<String> = Vec::new();
        let mut verdicts = Vec::new();
        let mut last: Option<AnalysisResult> = None;

        for attempt in 1..=self.config.max_retries + 1 {
            let critique = join_critiques(&critiques);
            let prompt = build_step2_prompt(templates, post, completed, task, critique.as_deref());
            tally.analysis += 1;
            let raw = self.call(Role::Analysis, &prompt)?;
            let parsed = match parse_label(&raw, task) {
                Ok(p) => Ok(p),
                Err(_) => {
                    let repair = build_step2_repair_prompt(templates, task, &raw);
                    tally.analysis += 1;
                    let raw = self.call(Role::Analysis, &repair)?;
                    parse_label(&raw, task)
                }
            };
            let (label, explanation) = match parsed {
                Ok(p) => p,
                Err(e) => {
                    return Ok(AnalysisStep {
                        result: AnalysisResult {
                            label: task.fallback_label().to_string(),
                            explanation: String::new(),
                            cited_items: Vec::new(),
                        },
                        verdicts,
                        outcome: StageOutcome::after(attempt),
                        failure: Some(format!("analysis label unparseable after repair: {e}")),
                    })
                }
            };
            let result = AnalysisResult {
                cited_items: cited_items(&explanation, scale),
                label,
                explanation,
            };

            if !self.config.mode.uses_discriminator() {
                return Ok(AnalysisStep {
                    result,
                    verdicts,
                    outcome: StageOutcome::FirstPass,
                    failure: None,
                });
            }

            let verdict = self.discriminate_analysis(
                post,
                completed,
                task,
                &result,
                critique.as_deref(),
                tally,
            )?;
            verdicts.push(verdict.clone());
            if verdict.accepted {
                return Ok(AnalysisStep {
                    result,
                    verdicts,
                    outcome: StageOutcome::after(attempt),
                    failure: None,
                });
            }
            critiques.push(verdict.critique);
            last = Some(result);
        }
        Ok(AnalysisStep {
            result: last.expect("at least one attempt ran"),
            verdicts,
            outcome: StageOutcome::Forced,
            failure: None,
        })
    }

    /// Like [`Pipeline::run_pipeline`] but surfaces backend errors instead
    /// of folding them into a failed record.
    pub fn try_run_pipeline(
        &self,
        post: &Post,
        scale: &MentalScale,
        task: &TaskSpec,
    ) -> Result<FinalRecord, LlmError> {
        let started_at = chrono::Utc::now().to_rfc3339();
        let clock = Instant::now();
        let mode = self.config.mode;
        let mut tally = CallTally::default();
        let mut verdicts = Vec::new();
        let mut status = Status::Accepted;

        let finish = |scale_response, analysis, verdicts, status, error, tally| FinalRecord {
            trace_schema_version: TRACE_SCHEMA_VERSION,
            post_id: post.post_id.clone(),
            post_text: post.text.clone(),
            mode,
            scale_response,
            analysis,
            verdicts,
            status,
            error,
            calls: tally,
            meta: RecordMeta {
                started_at: started_at.clone(),
                wall_seconds: clock.elapsed().as_secs_f64(),
            },
        };

        let scale_response = if mode.uses_scale() {
            match self.complete_scale(post, scale, &mut tally) {
                Ok((response, outcome)) => {
                    verdicts.extend(response.verdict_history.iter().cloned());
                    status = status.max(outcome.status());
                    Some(response)
                }
                Err(PipelineError::Backend(e)) => return Err(e),
                Err(PipelineError::PipelineFailure(msg)) => {
                    let fallback = AnalysisResult {
                        label: task.fallback_label().to_string(),
                        explanation: String::new(),
                        cited_items: Vec::new(),
                    };
                    return Ok(finish(
                        None,
                        fallback,
                        verdicts,
                        Status::Failed,
                        Some(msg),
                        tally,
                    ));
                }
            }
        } else {
            None
        };

        let step = self.analyze(
            post,
            scale_response.as_ref().map(|r| (r, scale)),
            task,
            &mut tally,
        )?;
        verdicts.extend(step.verdicts);
        status = status.max(step.outcome.status());
        if step.failure.is_some() {
            status = Status::Failed;
        }
        Ok(finish(
            scale_response,
            step.result,
            verdicts,
            status,
            step.failure,
            tally,
        ))
    }

    /// Always yields a record; backend errors become status `failed`.
    pub fn run_pipeline(&self, post: &Post, scale: &MentalScale, task: &TaskSpec) -> FinalRecord {
        match self.try_run_pipeline(post, scale, task) {
            Ok(r) => r,
            Err(e) => FinalRecord {
                trace_schema_version: TRACE_SCHEMA_VERSION,
                post_id: post.post_id.clone(),
                post_text: post.text.clone(),
                mode: self.config.mode,
                scale_response: None,
                analysis: AnalysisResult {
                    label: task.fallback_label().to_string(),
                    explanation: String::new(),
                    cited_items: Vec::new(),
                },
                verdicts: Vec::new(),
                status: Status::Failed,
                error: Some(e.to_string()),
                calls: CallTally::default(),
                meta: RecordMeta {
                    started_at: chrono::Utc::now().to_rfc3339(),
                    wall_seconds: 0.0,
                },
            },
        }
    }

    /// Processes the corpus on `workers` threads. Records come back in
    /// corpus order; the first backend error aborts the run.
    pub fn run_corpus(
        &self,
        corpus: &Corpus,
        scale: &MentalScale,
        task: &TaskSpec,
    ) -> Result<Vec<FinalRecord>, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .map_err(|e| PipelineError::PipelineFailure(format!("worker pool: {e}")))?;
        pool.install(|| {
            corpus
                .posts
                .par_iter()
                .map(|p| self.try_run_pipeline(p, scale, task))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(PipelineError::Backend)
    }
}
