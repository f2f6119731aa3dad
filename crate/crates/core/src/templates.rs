//! Prompt templates with `{name}` placeholders.
//!
//! `{{` and `}}` produce literal braces. Each template kind declares the
//! placeholders it may use; unknown names are rejected at load time so a
//! typo in an override file fails fast instead of leaking into prompts.

use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("template {template}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template {template}: stray '}}' at byte {offset}")]
    StrayBrace { template: String, offset: usize },
    #[error("template {template}: no value for {{{name}}}")]
    MissingValue { template: String, name: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(name: &str, source: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut text = String::new();
        let bytes = source.as_bytes();
        let mut i = 0;
        while i < source.len() {
            let c = bytes[i];
            if c == b'{' {
                if bytes.get(i + 1) == Some(&b'{') {
                    text.push('{');
                    i += 2;
                    continue;
                }
                let close = source[i + 1..]
                    .find('}')
                    .ok_or(TemplateError::Unterminated {
                        template: name.to_string(),
                        offset: i,
                    })?;
                let var = &source[i + 1..i + 1 + close];
                if !allowed.contains(&var) {
                    return Err(TemplateError::UnknownPlaceholder {
                        template: name.to_string(),
                        name: var.to_string(),
                    });
                }
                if !text.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                }
                segments.push(Segment::Var(var.to_string()));
                i += close + 2;
            } else if c == b'}' {
                if bytes.get(i + 1) == Some(&b'}') {
                    text.push('}');
                    i += 2;
                    continue;
                }
                return Err(TemplateError::StrayBrace {
                    template: name.to_string(),
                    offset: i,
                });
            } else {
                let ch = source[i..].chars().next().expect("in bounds");
                text.push(ch);
                i += ch.len_utf8();
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Ok(Template {
            name: name.to_string(),
            source: source.to_string(),
            segments,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Var(v) => Some(v.as_str()),
            Segment::Text(_) => None,
        })
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.source.len() * 2);
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Var(v) => {
                    let value = vars
                        .iter()
                        .find(|(k, _)| k == v)
                        .map(|(_, val)| *val)
                        .ok_or_else(|| TemplateError::MissingValue {
                            template: self.name.clone(),
                            name: v.clone(),
                        })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Step1,
    Step1Repair,
    ScaleDiscriminator,
    Step2,
    Step2NoScale,
    Step2Repair,
    AnalysisDiscriminator,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 7] = [
        TemplateKind::Step1,
        TemplateKind::Step1Repair,
        TemplateKind::ScaleDiscriminator,
        TemplateKind::Step2,
        TemplateKind::Step2NoScale,
        TemplateKind::Step2Repair,
        TemplateKind::AnalysisDiscriminator,
    ];

    /// File name inside a templates directory.
    pub fn file_name(self) -> &'static str {
        match self {
            TemplateKind::Step1 => "step1.txt",
            TemplateKind::Step1Repair => "step1_repair.txt",
            TemplateKind::ScaleDiscriminator => "scale_discriminator.txt",
            TemplateKind::Step2 => "step2.txt",
            TemplateKind::Step2NoScale => "step2_no_scale.txt",
            TemplateKind::Step2Repair => "step2_repair.txt",
            TemplateKind::AnalysisDiscriminator => "analysis_discriminator.txt",
        }
    }

    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Step1 => &[
                "post",
                "scale_name",
                "scale_items",
                "item_count",
                "critique",
            ],
            TemplateKind::Step1Repair => &[
                "post",
                "scale_name",
                "scale_items",
                "item_count",
                "previous_output",
                "problems",
            ],
            TemplateKind::ScaleDiscriminator => &[
                "post",
                "scale_name",
                "scale_items",
                "completed_scale",
                "evidence_report",
                "previous_feedback",
            ],
            TemplateKind::Step2 => &[
                "post",
                "question",
                "labels",
                "scale_name",
                "completed_scale",
                "critique",
            ],
            TemplateKind::Step2NoScale => &["post", "question", "labels", "critique"],
            TemplateKind::Step2Repair => &["question", "labels", "previous_output"],
            TemplateKind::AnalysisDiscriminator => &[
                "post",
                "question",
                "labels",
                "completed_scale_section",
                "label",
                "explanation",
                "previous_feedback",
            ],
        }
    }

    fn default_source(self) -> &'static str {
        match self {
            TemplateKind::Step1 => include_str!("../templates/step1.txt"),
            TemplateKind::Step1Repair => include_str!("../templates/step1_repair.txt"),
            TemplateKind::ScaleDiscriminator => {
                include_str!("../templates/scale_discriminator.txt")
            }
            TemplateKind::Step2 => include_str!("../templates/step2.txt"),
            TemplateKind::Step2NoScale => include_str!("../templates/step2_no_scale.txt"),
            TemplateKind::Step2Repair => include_str!("../templates/step2_repair.txt"),
            TemplateKind::AnalysisDiscriminator => {
                include_str!("../templates/analysis_discriminator.txt")
            }
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name())
    }
}

/// The full prompt set used by one pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    templates: Vec<Template>,
}

impl PromptTemplates {
    pub fn defaults() -> Self {
        let templates = TemplateKind::ALL
            .iter()
            .map(|k| {
                Template::parse(k.file_name(), k.default_source(), k.placeholders())
                    .expect("bundled templates are valid")
            })
            .collect();
        PromptTemplates { templates }
    }

    /// Defaults, with every `<kind>.txt` present in `dir` taking precedence.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::defaults();
        for (i, kind) in TemplateKind::ALL.iter().enumerate() {
            let path = dir.join(kind.file_name());
            if !path.exists() {
                continue;
            }
            let src = fs::read_to_string(&path).map_err(|e| TemplateError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            set.templates[i] = Template::parse(kind.file_name(), &src, kind.placeholders())?;
        }
        Ok(set)
    }

    pub fn get(&self, kind: TemplateKind) -> &Template {
        let i = TemplateKind::ALL
            .iter()
            .position(|k| *k == kind)
            .expect("all kinds present");
        &self.templates[i]
    }

    /// Hex SHA-256 over every template's name and source.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.templates {
            h.update(t.name.as_bytes());
            h.update([0u8]);
            h.update(t.source.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::defaults()
    }
}
