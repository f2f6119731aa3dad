use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use maims_core::eval::summary_table;
use maims_core::llm::{CacheStats, LlmError};
use maims_core::pipeline::{read_traces, write_traces, PipelineError};
use maims_core::{
    evaluate, load_corpus, load_scale, load_task, record_script, take_prefix, validate_scale,
    Backend, Corpus, CorpusError, DiskCache, EvalReport, FinalRecord, MentalScale, MockScript,
    Mode, Pipeline, PipelineConfig, PromptTemplates, RetryPolicy, ScaleError, TaskSpec,
};
use serde::Serialize;

use crate::config::{config_digest, RunConfig};
use crate::render::render_record;

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

/// An error together with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exit {}: {:#}", self.code, self.error)
    }
}

pub type CmdResult = Result<(), Failure>;

pub trait ExitCode<T> {
    fn exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitCode<T> for Result<T, E> {
    fn exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn backend_failure(e: LlmError) -> Failure {
    let code = match e {
        LlmError::Config(_) | LlmError::Script(_) => EXIT_CONFIG,
        _ => EXIT_BACKEND,
    };
    fail(
        code,
        anyhow::Error::new(e).context("backend error, run aborted"),
    )
}

struct Inputs {
    task: TaskSpec,
    scale: MentalScale,
    corpus: Corpus,
    templates: PromptTemplates,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, Failure> {
    let task = load_task(&cfg.task)
        .with_context(|| format!("task {}", cfg.task.display()))
        .exit(EXIT_CONFIG)?;
    let scale = load_scale(&cfg.scale)
        .with_context(|| format!("scale {}", cfg.scale.display()))
        .exit(EXIT_CONFIG)?;
    if task.scale_id != scale.scale_id {
        return Err(fail(
            EXIT_CONFIG,
            anyhow!(
                "task {} expects scale {:?} but {} defines {:?}",
                cfg.task.display(),
                task.scale_id,
                cfg.scale.display(),
                scale.scale_id
            ),
        ));
    }
    let mut corpus = load_corpus(&cfg.corpus, Some(&task), false)
        .with_context(|| format!("corpus {}", cfg.corpus.display()))
        .exit(EXIT_CONFIG)?;
    if let Some(n) = cfg.n {
        corpus = take_prefix(&corpus, n);
    }
    if corpus.is_empty() {
        return Err(fail(
            EXIT_CONFIG,
            anyhow!("corpus {} has no posts", cfg.corpus.display()),
        ));
    }
    let templates = match &cfg.templates {
        Some(dir) => PromptTemplates::load_dir(dir)
            .with_context(|| format!("templates {}", dir.display()))
            .exit(EXIT_CONFIG)?,
        None => PromptTemplates::defaults(),
    };
    Ok(Inputs {
        task,
        scale,
        corpus,
        templates,
    })
}

fn build_backend(cfg: &RunConfig, replay: Option<&Path>) -> Result<Backend, Failure> {
    let cache = cfg.cache_dir.as_ref().map(DiskCache::new);
    let retry = RetryPolicy {
        max_retries: cfg.transport_retries,
        base_delay_ms: cfg.retry_base_delay_ms,
    };
    match replay {
        Some(path) => {
            let script = MockScript::load(path).exit(EXIT_CONFIG)?;
            Backend::replay(cfg.roles.clone(), script, cache, retry)
        }
        None => Backend::from_configs(cfg.roles.clone(), cache, retry),
    }
    .map_err(backend_failure)
}

fn pipeline_config(cfg: &RunConfig, mode: Mode, templates: &PromptTemplates) -> PipelineConfig {
    PipelineConfig {
        mode,
        max_retries: cfg.max_retries,
        workers: cfg.workers,
        templates: templates.clone(),
    }
}

fn run_mode(
    backend: &Backend,
    cfg: &RunConfig,
    mode: Mode,
    inputs: &Inputs,
) -> Result<Vec<FinalRecord>, Failure> {
    let pc = pipeline_config(cfg, mode, &inputs.templates);
    Pipeline::new(backend, &pc)
        .run_corpus(&inputs.corpus, &inputs.scale, &inputs.task)
        .map_err(|e| match e {
            PipelineError::Backend(e) => backend_failure(e),
            other => fail(EXIT_BACKEND, other.into()),
        })
}

/// Creates `<base>/<timestamp>`, adding a suffix if a run in the same
/// millisecond already claimed the name.
fn fresh_run_dir(base: &Path) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(base).with_context(|| format!("cannot create {}", base.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    for i in 0.. {
        let name = if i == 0 {
            stamp.clone()
        } else {
            format!("{stamp}-{i}")
        };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("cannot create {}", dir.display())),
        }
    }
    unreachable!()
}

#[derive(Serialize)]
struct StampedReport<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    generated_at: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_report(path: &Path, report: &EvalReport) -> anyhow::Result<()> {
    write_json(
        path,
        &StampedReport {
            report,
            generated_at: chrono::Utc::now().to_rfc3339(),
        },
    )
}

#[derive(Serialize)]
struct MergedConfig<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    config: &'a RunConfig,
}

fn print_calls(backend: &Backend) {
    let c = backend.counters();
    let calls: u64 = maims_core::Role::ALL.iter().map(|r| c.get(*r).calls).sum();
    let hits: u64 = maims_core::Role::ALL
        .iter()
        .map(|r| c.get(*r).cache_hits)
        .sum();
    println!(
        "model calls: {calls} (transport: {}, cache hits: {hits})",
        c.total_transport()
    );
}

fn status_line(records: &[FinalRecord]) -> String {
    let mut counts = std::collections::BTreeMap::new();
    for r in records {
        *counts.entry(r.status).or_insert(0usize) += 1;
    }
    counts
        .iter()
        .map(|(s, n)| format!("{} {n}", s.as_str()))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn cmd_run(cfg: &RunConfig, replay: Option<&Path>) -> CmdResult {
    let inputs = load_inputs(cfg)?;
    let backend = build_backend(cfg, replay)?;
    let records = run_mode(&backend, cfg, cfg.mode, &inputs)?;

    let dir = fresh_run_dir(
        &cfg.output_dir
            .join(&inputs.task.task_id)
            .join(cfg.mode.as_str()),
    )
    .exit(EXIT_CONFIG)?;
    let digest = config_digest(
        cfg,
        cfg.mode,
        &inputs.task,
        &inputs.scale,
        &inputs.corpus,
        &inputs.templates,
    );
    write_traces(&dir.join("traces.jsonl"), &records).exit(EXIT_CONFIG)?;
    write_json(
        &dir.join("merged_config.json"),
        &MergedConfig {
            config_digest: &digest,
            config: cfg,
        },
    )
    .exit(EXIT_CONFIG)?;

    println!(
        "{} posts, mode {}: {}",
        records.len(),
        cfg.mode,
        status_line(&records)
    );
    print_calls(&backend);
    if inputs.corpus.is_labeled() {
        let report = evaluate(
            &records,
            &inputs.corpus,
            &inputs.task,
            cfg.include_failed,
            &digest,
        )
        .exit(EXIT_CONFIG)?;
        write_report(&dir.join("report.json"), &report).exit(EXIT_CONFIG)?;
        print!("{}", summary_table(&[&report]));
    } else {
        println!("corpus has unlabeled posts; no report written");
    }
    println!("output: {}", dir.display());
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, n: usize, replay: Option<&Path>) -> CmdResult {
    let cfg = RunConfig {
        n: Some(n),
        ..cfg.clone()
    };
    let inputs = load_inputs(&cfg)?;
    if !inputs.corpus.is_labeled() {
        return Err(fail(
            EXIT_CONFIG,
            anyhow!(
                "gold labels required: {} has unlabeled posts",
                cfg.corpus.display()
            ),
        ));
    }
    let backend = build_backend(&cfg, replay)?;
    let dir = fresh_run_dir(&cfg.output_dir.join(&inputs.task.task_id).join("ablation"))
        .exit(EXIT_CONFIG)?;

    let mut reports = Vec::with_capacity(Mode::ALL.len());
    for mode in Mode::ALL {
        let records = run_mode(&backend, &cfg, mode, &inputs)?;
        let digest = config_digest(
            &cfg,
            mode,
            &inputs.task,
            &inputs.scale,
            &inputs.corpus,
            &inputs.templates,
        );
        let report = evaluate(
            &records,
            &inputs.corpus,
            &inputs.task,
            cfg.include_failed,
            &digest,
        )
        .exit(EXIT_CONFIG)?;
        let sub = dir.join(mode.as_str());
        fs::create_dir_all(&sub).exit(EXIT_CONFIG)?;
        write_traces(&sub.join("traces.jsonl"), &records).exit(EXIT_CONFIG)?;
        write_report(&sub.join("report.json"), &report).exit(EXIT_CONFIG)?;
        reports.push(report);
    }
    let merged = RunConfig {
        mode: Mode::Full,
        ..cfg.clone()
    };
    write_json(
        &dir.join("merged_config.json"),
        &MergedConfig {
            config_digest: &reports[0].config_digest,
            config: &merged,
        },
    )
    .exit(EXIT_CONFIG)?;
    let table = summary_table(&reports.iter().collect::<Vec<_>>());
    fs::write(dir.join("summary.txt"), &table).exit(EXIT_CONFIG)?;
    print!("{table}");
    print_calls(&backend);
    println!("output: {}", dir.display());
    Ok(())
}

/// Re-scores existing traces against the corpus and task named in `cfg`.
pub fn cmd_eval(cfg: &RunConfig, traces: &Path, report_out: Option<&Path>) -> CmdResult {
    let records = read_traces(traces).exit(EXIT_INVALID)?;
    let Some(first) = records.first() else {
        return Err(fail(
            EXIT_INVALID,
            anyhow!("{} contains no records", traces.display()),
        ));
    };
    let mode = first.mode;
    if let Some(r) = records.iter().find(|r| r.mode != mode) {
        return Err(fail(
            EXIT_INVALID,
            anyhow!(
                "{}: record {} has mode {} but the first record has {mode}",
                traces.display(),
                r.post_id,
                r.mode
            ),
        ));
    }
    let cfg = RunConfig {
        n: None,
        ..cfg.clone()
    };
    let inputs = load_inputs(&cfg)?;
    let digest = config_digest(
        &cfg,
        mode,
        &inputs.task,
        &inputs.scale,
        &inputs.corpus,
        &inputs.templates,
    );
    let report = evaluate(
        &records,
        &inputs.corpus,
        &inputs.task,
        cfg.include_failed,
        &digest,
    )
    .with_context(|| format!("cannot score {}", traces.display()))
    .exit(EXIT_INVALID)?;
    match report_out {
        Some(path) => {
            write_report(path, &report).exit(EXIT_CONFIG)?;
            print!("{}", summary_table(&[&report]));
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        ),
    }
    Ok(())
}

fn scale_violations(path: &Path) -> Vec<String> {
    match load_scale(path) {
        Ok(scale) => validate_scale(&scale),
        Err(ScaleError::MalformedScale(v)) => v,
        Err(e) => vec![e.to_string()],
    }
}

fn task_violations(path: &Path) -> (Option<TaskSpec>, Vec<String>) {
    match load_task(path) {
        Ok(task) => (Some(task), Vec::new()),
        Err(CorpusError::InvalidTask(v)) => (None, v),
        Err(e) => (None, vec![e.to_string()]),
    }
}

pub fn cmd_validate(scale: Option<&Path>, task: Option<&Path>, corpus: Option<&Path>) -> CmdResult {
    if scale.is_none() && task.is_none() && corpus.is_none() {
        return Err(fail(
            EXIT_CONFIG,
            anyhow!("nothing to validate: pass --scale, --task or --corpus"),
        ));
    }
    let mut violations = Vec::new();
    if let Some(p) = scale {
        violations.extend(scale_violations(p));
    }
    let mut spec = None;
    if let Some(p) = task {
        let (t, v) = task_violations(p);
        spec = t;
        violations.extend(v);
    }
    if let Some(p) = corpus {
        if let Err(e) = load_corpus(p, spec.as_ref(), spec.is_some()) {
            violations.push(e.to_string());
        }
    }
    if violations.is_empty() {
        println!("OK");
        Ok(())
    } else {
        for v in &violations {
            println!("{v}");
        }
        let n = violations.len();
        Err(fail(
            EXIT_INVALID,
            anyhow!("{n} violation{}", if n == 1 { "" } else { "s" }),
        ))
    }
}

/// The scale named by a `merged_config.json` next to the trace file, if any.
fn sibling_scale(traces: &Path) -> Option<MentalScale> {
    let merged = traces.parent()?.join("merged_config.json");
    let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(merged).ok()?).ok()?;
    load_scale(value.get("scale")?.as_str()?).ok()
}

pub fn cmd_show_trace(traces: &Path, post_id: &str, scale: Option<&Path>) -> CmdResult {
    let records = read_traces(traces).exit(EXIT_INVALID)?;
    let scale = match scale {
        Some(p) => Some(load_scale(p).exit(EXIT_CONFIG)?),
        None => sibling_scale(traces),
    };
    let record = records
        .iter()
        .find(|r| r.post_id == post_id)
        .ok_or_else(|| {
            fail(
                EXIT_INVALID,
                anyhow!("NotFound: post {post_id} is not in {}", traces.display()),
            )
        })?;
    print!("{}", render_record(record, scale.as_ref()));
    Ok(())
}

pub fn cmd_cache_stats(dir: &Path) -> CmdResult {
    let CacheStats { entries, bytes } = DiskCache::new(dir).stats().exit(EXIT_CONFIG)?;
    println!("cache: {}", dir.display());
    println!("entries: {entries}");
    println!("bytes: {bytes}");
    Ok(())
}

pub fn cmd_cache_clear(dir: &Path) -> CmdResult {
    let removed = DiskCache::new(dir).clear().exit(EXIT_CONFIG)?;
    println!("removed {removed} entries from {}", dir.display());
    Ok(())
}

pub fn cmd_cache_export(dir: &Path, out: &Path) -> CmdResult {
    let script = record_script(&DiskCache::new(dir)).exit(EXIT_CONFIG)?;
    let mut text = script.to_json();
    text.push('\n');
    fs::write(out, text)
        .with_context(|| format!("cannot write {}", out.display()))
        .exit(EXIT_CONFIG)?;
    println!(
        "exported {} responses to {}",
        script.responses.len(),
        out.display()
    );
    Ok(())
}
