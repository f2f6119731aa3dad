//! Labeled post corpora and task definitions.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub text: String,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub question: String,
    pub labels: Vec<String>,
    pub positive_label: String,
    pub scale_id: String,
}

impl TaskSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.task_id.trim().is_empty() {
            v.push("task: empty task_id".to_string());
        }
        if self.question.trim().is_empty() {
            v.push("task: empty question".to_string());
        }
        if self.labels.len() < 2 {
            v.push("task: fewer than 2 labels".to_string());
        }
        let mut seen = HashSet::new();
        for l in &self.labels {
            if l.trim().is_empty() {
                v.push("task: empty label".to_string());
            } else if !seen.insert(l.to_lowercase()) {
                v.push(format!("task: duplicate label: {l}"));
            }
        }
        if !self.labels.contains(&self.positive_label) {
            v.push(format!(
                "task: positive_label {:?} is not one of labels",
                self.positive_label
            ));
        }
        v
    }

    /// Maps a label to its canonical spelling, ignoring case and surrounding whitespace.
    pub fn canonical_label(&self, raw: &str) -> Option<&str> {
        let raw = raw.trim();
        self.labels
            .iter()
            .find(|l| l.to_lowercase() == raw.to_lowercase())
            .map(String::as_str)
    }

    /// The first label that is not the positive one.
    pub fn fallback_label(&self) -> &str {
        self.labels
            .iter()
            .find(|l| **l != self.positive_label)
            .unwrap_or(&self.positive_label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub corpus_id: String,
    pub posts: Vec<Post>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, post_id: &str) -> Option<&Post> {
        self.posts.iter().find(|p| p.post_id == post_id)
    }

    pub fn is_labeled(&self) -> bool {
        self.posts.iter().all(|p| p.gold_label.is_some())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate post id: {0}")]
    DuplicateId(String),
    #[error("post {0}: missing gold label")]
    MissingLabel(String),
    #[error("invalid task: {}", .0.join("; "))]
    InvalidTask(Vec<String>),
}

#[derive(Deserialize)]
struct RawRecord {
    post_id: Option<serde_json::Value>,
    text: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

/// Parses JSONL corpus text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_corpus(
    corpus_id: &str,
    jsonl: &str,
    task: Option<&TaskSpec>,
    require_labels: bool,
) -> Result<Corpus, CorpusError> {
    let mut posts = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in jsonl.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedRecord {
            line: lineno,
            reason,
        };
        let raw: RawRecord =
            serde_json::from_str(line).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
        let post_id = match raw.post_id {
            Some(serde_json::Value::String(s)) if !s.is_empty() => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => return Err(malformed("post_id must be a non-empty string".into())),
            None => return Err(malformed("missing post_id".into())),
        };
        let text = match raw.text {
            Some(t) if !t.trim().is_empty() => t,
            Some(_) => return Err(malformed("empty text".into())),
            None => return Err(malformed("missing text".into())),
        };
        let gold_label = match (raw.label, task) {
            (Some(l), Some(task)) => match task.canonical_label(&l) {
                Some(c) => Some(c.to_string()),
                None => return Err(malformed(format!("unknown label {l:?}"))),
            },
            (Some(l), None) => Some(l),
            (None, _) => None,
        };
        if !ids.insert(post_id.clone()) {
            return Err(CorpusError::DuplicateId(post_id));
        }
        if require_labels && gold_label.is_none() {
            return Err(CorpusError::MissingLabel(post_id));
        }
        posts.push(Post {
            post_id,
            text,
            gold_label,
        });
    }
    Ok(Corpus {
        corpus_id: corpus_id.to_string(),
        posts,
    })
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    task: Option<&TaskSpec>,
    require_labels: bool,
) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let corpus_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    parse_corpus(&corpus_id, &text, task, require_labels)
}

pub fn load_task(path: impl AsRef<Path>) -> Result<TaskSpec, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let task: TaskSpec = serde_json::from_str(&text)
        .map_err(|e| CorpusError::InvalidTask(vec![format!("invalid JSON: {e}")]))?;
    let violations = task.validate();
    if violations.is_empty() {
        Ok(task)
    } else {
        Err(CorpusError::InvalidTask(violations))
    }
}

/// The first `n` posts in file order.
pub fn take_prefix(corpus: &Corpus, n: usize) -> Corpus {
    Corpus {
        corpus_id: corpus.corpus_id.clone(),
        posts: corpus.posts.iter().take(n).cloned().collect(),
    }
}
