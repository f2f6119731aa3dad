//! Accuracy, support-weighted F1 and run-level evaluation reports.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{take_prefix, Corpus, TaskSpec};
use crate::llm::Backend;
use crate::pipeline::{FinalRecord, Mode, Pipeline, PipelineConfig, PipelineError, Status};
use crate::scales::MentalScale;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("golds has {golds} labels but preds has {preds}")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("post {0} has no gold label")]
    MissingGold(String),
    #[error("record for unknown post {0}")]
    UnknownRecord(String),
    #[error("more than one record for post {0}")]
    DuplicateRecord(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn check_lengths<T>(golds: &[T], preds: &[T]) -> Result<(), EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    if golds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class metrics for every label seen in either vector, in label order.
/// Zero denominators give 0.
pub fn per_class_metrics<T: Ord + Clone + ToString>(
    golds: &[T],
    preds: &[T],
) -> Result<Vec<ClassMetrics>, EvalError> {
    check_lengths(golds, preds)?;
    let classes: BTreeSet<&T> = golds.iter().chain(preds).collect();
    Ok(classes
        .into_iter()
        .map(|c| {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for (g, p) in golds.iter().zip(preds) {
                match (g == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: c.to_string(),
                precision,
                recall,
                f1,
                support: tp + fn_,
            }
        })
        .collect())
}

/// Support-weighted mean of per-class F1 over the classes present in `golds`.
pub fn weighted_f1<T: Ord + Clone + ToString>(golds: &[T], preds: &[T]) -> Result<f64, EvalError> {
    let n = golds.len();
    let per_class = per_class_metrics(golds, preds)?;
    Ok(per_class
        .iter()
        .map(|m| m.support as f64 / n as f64 * m.f1)
        .sum())
}

pub fn accuracy<T: PartialEq>(golds: &[T], preds: &[T]) -> Result<f64, EvalError> {
    check_lengths(golds, preds)?;
    let hits = golds.iter().zip(preds).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Rows are gold labels, columns predicted labels, both in `labels` order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn build(labels: &[String], golds: &[String], preds: &[String]) -> Self {
        let mut labels = labels.to_vec();
        for l in golds.iter().chain(preds) {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
        let index: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
        for (g, p) in golds.iter().zip(preds) {
            counts[index[g.as_str()]][index[p.as_str()]] += 1;
        }
        ConfusionCounts { labels, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Metrics under the other failed-record policy, reported alongside the main numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternateMetrics {
    pub include_failed: bool,
    pub n_evaluated: usize,
    pub weighted_f1: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub mode: Mode,
    pub include_failed: bool,
    pub n_evaluated: usize,
    pub n_failed_status: usize,
    pub status_counts: BTreeMap<String, usize>,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionCounts,
    pub alternate: AlternateMetrics,
    pub config_digest: String,
}

/// Pairs records with gold labels by post id and scores them.
pub fn evaluate(
    records: &[FinalRecord],
    corpus: &Corpus,
    task: &TaskSpec,
    include_failed: bool,
    config_digest: &str,
) -> Result<EvalReport, EvalError> {
    let first = records.first().ok_or(EvalError::EmptyInput)?;
    let golds_by_id: HashMap<&str, Option<&str>> = corpus
        .posts
        .iter()
        .map(|p| (p.post_id.as_str(), p.gold_label.as_deref()))
        .collect();

    let mut seen = HashSet::new();
    let mut pairs: Vec<(String, String, Status)> = Vec::with_capacity(records.len());
    let mut status_counts = BTreeMap::new();
    for r in records {
        let gold = golds_by_id
            .get(r.post_id.as_str())
            .ok_or_else(|| EvalError::UnknownRecord(r.post_id.clone()))?
            .ok_or_else(|| EvalError::MissingGold(r.post_id.clone()))?;
        if !seen.insert(r.post_id.as_str()) {
            return Err(EvalError::DuplicateRecord(r.post_id.clone()));
        }
        *status_counts
            .entry(r.status.as_str().to_string())
            .or_insert(0) += 1;
        pairs.push((gold.to_string(), r.analysis.label.clone(), r.status));
    }
    let n_failed_status = pairs
        .iter()
        .filter(|(_, _, s)| *s == Status::Failed)
        .count();

    let select = |include: bool| -> (Vec<String>, Vec<String>) {
        pairs
            .iter()
            .filter(|(_, _, s)| include || *s != Status::Failed)
            .map(|(g, p, _)| (g.clone(), p.clone()))
            .unzip()
    };

    let (golds, preds) = select(include_failed);
    let per_class_all = per_class_metrics(&golds, &preds)?;
    let per_class: Vec<ClassMetrics> = {
        // task label order first, then anything unexpected
        let mut ordered: Vec<ClassMetrics> = task
            .labels
            .iter()
            .map(|l| {
                per_class_all
                    .iter()
                    .find(|m| &m.label == l)
                    .cloned()
                    .unwrap_or(ClassMetrics {
                        label: l.clone(),
                        precision: 0.0,
                        recall: 0.0,
                        f1: 0.0,
                        support: 0,
                    })
            })
            .collect();
        ordered.extend(
            per_class_all
                .iter()
                .filter(|m| !task.labels.contains(&m.label))
                .cloned(),
        );
        ordered
    };
    let (alt_golds, alt_preds) = select(!include_failed);
    let alternate = AlternateMetrics {
        include_failed: !include_failed,
        n_evaluated: alt_golds.len(),
        weighted_f1: weighted_f1(&alt_golds, &alt_preds).ok(),
        accuracy: accuracy(&alt_golds, &alt_preds).ok(),
    };

    Ok(EvalReport {
        task_id: task.task_id.clone(),
        mode: first.mode,
        include_failed,
        n_evaluated: golds.len(),
        n_failed_status,
        status_counts,
        weighted_f1: weighted_f1(&golds, &preds)?,
        accuracy: accuracy(&golds, &preds)?,
        confusion: ConfusionCounts::build(&task.labels, &golds, &preds),
        per_class,
        alternate,
        config_digest: config_digest.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct ModeRun {
    pub records: Vec<FinalRecord>,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    /// Always ordered full, no_scale, no_discriminator.
    pub runs: Vec<ModeRun>,
}

impl AblationReport {
    pub fn summary_table(&self) -> String {
        let reports: Vec<&EvalReport> = self.runs.iter().map(|r| &r.report).collect();
        summary_table(&reports)
    }
}

pub fn summary_table(reports: &[&EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<18}{:>6}{:>8}{:>13}{:>10}",
        "mode", "n", "failed", "weighted_f1", "accuracy"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<18}{:>6}{:>8}{:>13.4}{:>10.4}",
            r.mode.as_str(),
            r.n_evaluated,
            r.n_failed_status,
            r.weighted_f1,
            r.accuracy
        );
    }
    out
}

#[derive(Debug, Error)]
pub enum AblationError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Runs all three modes over the first `n` posts with the same backend and templates.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    backend: &Backend,
    base: &PipelineConfig,
    corpus: &Corpus,
    scale: &MentalScale,
    task: &TaskSpec,
    n: usize,
    include_failed: bool,
    config_digest: &dyn Fn(Mode) -> String,
) -> Result<AblationReport, AblationError> {
    let subset = take_prefix(corpus, n);
    let mut runs = Vec::with_capacity(3);
    for mode in Mode::ALL {
        let cfg = PipelineConfig {
            mode,
            ..base.clone()
        };
        let records = Pipeline::new(backend, &cfg).run_corpus(&subset, scale, task)?;
        let report = evaluate(
            &records,
            &subset,
            task,
            include_failed,
            &config_digest(mode),
        )?;
        runs.push(ModeRun { records, report });
    }
    Ok(AblationReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_checked_values() {
        let wf = weighted_f1(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert!((wf - 0.733_333_333_333).abs() < 1e-9, "{wf}");
        assert_eq!(accuracy(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap(), 0.75);
        let wf = weighted_f1(&[1, 1, 1, 0], &[1, 1, 1, 1]).unwrap();
        assert!((wf - 0.642_857_142_857).abs() < 1e-9, "{wf}");
    }

    #[test]
    fn perfect_and_all_wrong() {
        let g = ["a", "b", "c", "a"];
        assert_eq!(weighted_f1(&g, &g).unwrap(), 1.0);
        assert_eq!(accuracy(&g, &g).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(weighted_f1(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(weighted_f1(&[7, 7, 7], &[7, 7, 7]).unwrap(), 1.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            weighted_f1(&[1, 0], &[1]),
            Err(EvalError::LengthMismatch { golds: 2, preds: 1 })
        );
        assert_eq!(accuracy::<u8>(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn predicted_only_class_contributes_nothing() {
        // class 2 never appears in golds; support 0
        let m = per_class_metrics(&[0, 1], &[2, 1]).unwrap();
        assert_eq!(m.iter().find(|c| c.label == "2").unwrap().support, 0);
        assert_eq!(weighted_f1(&[0, 1], &[2, 1]).unwrap(), 0.5);
    }

    #[test]
    fn confusion_layout() {
        let labels = vec!["Yes".to_string(), "No".to_string()];
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let c =
            ConfusionCounts::build(&labels, &s(&["Yes", "Yes", "No"]), &s(&["Yes", "No", "No"]));
        assert_eq!(c.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!((c.total(), c.trace()), (3, 2));
    }
}
