//! Parsers for the three kinds of model output.
//!
//! Scale completions use a line layout inside a fenced block:
//!
//! ```text
//! <item_id> | <mention> | <option code or -> | evidence: "<quote>" "<quote>" | reason: <text>
//! ```

use std::collections::HashMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;

use crate::corpus::{Post, TaskSpec};
use crate::scales::{MentalScale, ScaleItem};

use super::evidence::verify_evidence;
use super::{ItemIssue, ItemResponse, MentionCategory, ScaleResponse, Stage, Verdict};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseFailure {
    pub missing_items: Vec<String>,
    pub unknown_options: Vec<(String, String)>,
    pub unknown_mentions: Vec<(String, String)>,
    pub missing_options: Vec<String>,
}

impl ParseFailure {
    fn is_empty(&self) -> bool {
        self.missing_items.is_empty()
            && self.unknown_options.is_empty()
            && self.unknown_mentions.is_empty()
            && self.missing_options.is_empty()
    }
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut lines = Vec::new();
        if !self.missing_items.is_empty() {
            lines.push(format!(
                "- missing items: {}",
                self.missing_items.join(", ")
            ));
        }
        for (item, token) in &self.unknown_mentions {
            lines.push(format!(
                "- item {item}: unknown mention category {token:?} (use direct_mention, indirect_mention or no_mention)"
            ));
        }
        for (item, token) in &self.unknown_options {
            lines.push(format!("- item {item}: unknown option {token:?}"));
        }
        for item in &self.missing_options {
            lines.push(format!("- item {item}: mentioned but no option selected"));
        }
        f.write_str(&lines.join("\n"))
    }
}

impl std::error::Error for ParseFailure {}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[^\n]*\n(.*?)```").expect("valid regex"));
static REASON: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\|\s*(?:reason|rationale)\s*:").expect("valid regex"));
static EVIDENCE_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*evidence\s*:").expect("valid regex"));
static QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""([^"]*)"|“([^”]*)”"#).expect("valid regex"));

fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn is_blank_option(s: &str) -> bool {
    matches!(
        s.trim().to_lowercase().as_str(),
        "" | "-" | "—" | "none" | "n/a" | "na" | "null"
    )
}

enum OptionMatch {
    Code(String, String),
    Unknown,
}

/// Resolves an option field to a code. Accepts a bare code, a decorated
/// code such as `(B)` or `option 2`, or the option's text optionally
/// followed by free commentary, which is returned as the remainder.
fn resolve_option(item: &ScaleItem, field: &str) -> OptionMatch {
    let f = field.trim();
    let by_code = |s: &str| {
        item.options
            .iter()
            .find(|o| o.code.eq_ignore_ascii_case(s.trim()))
            .map(|o| o.code.clone())
    };
    if let Some(c) = by_code(f) {
        return OptionMatch::Code(c, String::new());
    }
    let mut stripped = f;
    if stripped.len() > 7 && stripped[..7].eq_ignore_ascii_case("option ") {
        stripped = &stripped[7..];
    }
    let stripped = stripped
        .trim_matches(|c: char| matches!(c, '(' | ')' | '[' | ']' | '.' | ':' | '\'' | '"'))
        .trim();
    if let Some(c) = by_code(stripped) {
        return OptionMatch::Code(c, String::new());
    }
    // "1) I feel sad" / "B: text"
    if let Some(pos) = f.find([')', '.', ':']) {
        let head = f[..pos].trim_start_matches('(');
        if let Some(c) = by_code(head) {
            return OptionMatch::Code(c, String::new());
        }
    }
    // option text prefix, longest first
    let nf = normalize_text(f);
    let mut best: Option<(&str, usize)> = None;
    for o in &item.options {
        let nt = normalize_text(&o.text);
        let nt = nt.trim_end_matches(['.', '!', ';']);
        if nt.is_empty() || !nf.starts_with(nt) {
            continue;
        }
        if best.is_none_or(|(_, len)| nt.len() > len) {
            best = Some((&o.code, nt.len()));
        }
    }
    match best {
        Some((code, _)) => {
            let opt_text = normalize_text(&item.option(code).expect("code from item").text);
            let rest = strip_normalized_prefix(f, opt_text.trim_end_matches(['.', '!', ';']))
                .unwrap_or("")
                .trim_start_matches(['.', '!', ';'])
                .trim()
                .to_string();
            OptionMatch::Code(code.to_string(), rest)
        }
        None => OptionMatch::Unknown,
    }
}

/// Strips `prefix` (already normalized) from `text`, treating any whitespace
/// run in `text` as one space and ignoring case.
fn strip_normalized_prefix<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let mut it = text.char_indices().peekable();
    for pc in prefix.chars() {
        if pc == ' ' {
            let mut any = false;
            while it.peek().is_some_and(|(_, c)| c.is_whitespace()) {
                it.next();
                any = true;
            }
            if !any {
                return None;
            }
            continue;
        }
        let (_, tc) = it.next()?;
        if !tc.to_lowercase().eq(pc.to_lowercase()) {
            return None;
        }
    }
    Some(it.peek().map_or("", |(i, _)| &text[*i..]))
}

fn parse_quotes(evidence: &str) -> Vec<String> {
    let body = EVIDENCE_PREFIX.replace(evidence, "");
    let body = body.trim();
    let quotes: Vec<String> = QUOTED
        .captures_iter(body)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| m.as_str().trim().to_string())
        .filter(|q| !q.is_empty())
        .collect();
    if !quotes.is_empty() {
        return quotes;
    }
    if is_blank_option(body) {
        Vec::new()
    } else {
        vec![body.to_string()]
    }
}

struct RawLine<'a> {
    mention: &'a str,
    option: &'a str,
    evidence: &'a str,
    reason: &'a str,
}

fn split_line(line: &str) -> Option<(String, RawLine<'_>)> {
    let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
    let mut parts = line.splitn(4, '|');
    let id = parts.next()?.trim();
    let mention = parts.next()?.trim();
    let option = parts.next()?.trim();
    let tail = parts.next().unwrap_or("");
    let id = id
        .strip_prefix("item")
        .or_else(|| id.strip_prefix("Item"))
        .unwrap_or(id)
        .trim()
        .trim_matches(|c: char| c == '\'' || c == '"' || c == '#')
        .to_string();
    // `tail` begins after the third '|'; re-prefix it so the reason regex sees a separator.
    let (evidence, reason) = match REASON.find(&format!("|{tail}")) {
        Some(m) if m.start() > 0 => {
            let cut = m.start() - 1;
            let after = m.end() - 1;
            (&tail[..cut], &tail[after..])
        }
        Some(m) => ("", &tail[m.end() - 1..]),
        None => (tail, ""),
    };
    let evidence = evidence.trim().trim_end_matches('|').trim();
    Some((
        id,
        RawLine {
            mention,
            option,
            evidence,
            reason: reason.trim(),
        },
    ))
}

/// Parses a poster completion. Every scale item must appear once; lines for
/// unknown item ids are ignored and duplicate lines keep the first.
pub fn parse_scale_response(
    raw: &str,
    scale: &MentalScale,
    post: &Post,
) -> Result<ScaleResponse, ParseFailure> {
    let blocks: Vec<&str> = FENCE
        .captures_iter(raw)
        .filter_map(|c| c.get(1).map(|m| m.as_str()))
        .collect();
    let body = if blocks.is_empty() {
        raw.to_string()
    } else {
        blocks.join("\n")
    };

    let mut found: HashMap<String, RawLine<'_>> = HashMap::new();
    for line in body.lines() {
        let Some((id, parsed)) = split_line(line) else {
            continue;
        };
        if scale.item(&id).is_some() && !found.contains_key(&id) {
            found.insert(id, parsed);
        }
    }

    let mut failure = ParseFailure::default();
    let mut items = Vec::with_capacity(scale.items.len());
    for item in &scale.items {
        let Some(line) = found.get(&item.item_id) else {
            failure.missing_items.push(item.item_id.clone());
            continue;
        };
        let Some(mention) = MentionCategory::from_token(line.mention) else {
            failure
                .unknown_mentions
                .push((item.item_id.clone(), line.mention.to_string()));
            continue;
        };
        let mut rationale = line.reason.to_string();
        let selected_option = if mention == MentionCategory::NoMention {
            None
        } else if is_blank_option(line.option) {
            failure.missing_options.push(item.item_id.clone());
            continue;
        } else {
            match resolve_option(item, line.option) {
                OptionMatch::Code(code, rest) => {
                    if rationale.is_empty() {
                        rationale = rest;
                    }
                    Some(code)
                }
                OptionMatch::Unknown => {
                    failure
                        .unknown_options
                        .push((item.item_id.clone(), line.option.to_string()));
                    continue;
                }
            }
        };
        let evidence_quotes = if mention == MentionCategory::NoMention {
            Vec::new()
        } else {
            parse_quotes(line.evidence)
        };
        items.push(ItemResponse {
            item_id: item.item_id.clone(),
            mention,
            selected_option,
            rationale,
            evidence_verified: vec![false; evidence_quotes.len()],
            evidence_quotes,
        });
    }
    if !failure.is_empty() {
        return Err(failure);
    }
    let response = ScaleResponse {
        scale_id: scale.scale_id.clone(),
        post_id: post.post_id.clone(),
        items,
        attempts: 1,
        verdict_history: Vec::new(),
    };
    Ok(verify_evidence(response, post))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelParseFailure {
    pub found_labels: Vec<String>,
}

impl fmt::Display for LabelParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.found_labels.is_empty() {
            f.write_str("no answer label found")
        } else {
            write!(
                f,
                "ambiguous answer: found {}",
                self.found_labels.join(", ")
            )
        }
    }
}

impl std::error::Error for LabelParseFailure {}

static ANSWER_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)answer\s*:").expect("valid regex"));

/// Case-insensitive prefix strip that respects a trailing word boundary.
fn strip_label<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let mut rest = text.char_indices();
    let mut end = 0;
    for lc in label.chars() {
        let (i, tc) = rest.next()?;
        if !tc.to_lowercase().eq(lc.to_lowercase()) {
            return None;
        }
        end = i + tc.len_utf8();
    }
    let tail = &text[end..];
    if tail.chars().next().is_some_and(char::is_alphanumeric) {
        return None;
    }
    Some(tail)
}

fn clean_explanation(s: &str) -> String {
    s.trim_start_matches(|c: char| {
        c.is_whitespace()
            || matches!(
                c,
                '.' | ',' | ';' | ':' | '!' | ')' | ']' | '*' | '"' | '\'' | '-'
            )
    })
    .trim_end()
    .to_string()
}

/// Extracts `(label, explanation)` from an analysis reply.
pub fn parse_label(raw: &str, task: &TaskSpec) -> Result<(String, String), LabelParseFailure> {
    let mut labels: Vec<&String> = task.labels.iter().collect();
    labels.sort_by_key(|l| std::cmp::Reverse(l.chars().count()));

    if let Some(m) = ANSWER_MARKER.find(raw) {
        let after = raw[m.end()..].trim_start_matches(|c: char| {
            c.is_whitespace() || matches!(c, '*' | '"' | '\'' | '[' | '(' | '`')
        });
        for label in &labels {
            if let Some(tail) = strip_label(after, label) {
                return Ok(((*label).clone(), clean_explanation(tail)));
            }
        }
    }

    let found: Vec<String> = task
        .labels
        .iter()
        .filter(|l| {
            let pat = format!(r"(?i)(^|[^\w]){}($|[^\w])", regex::escape(l));
            Regex::new(&pat).is_ok_and(|re| re.is_match(raw))
        })
        .cloned()
        .collect();
    if found.len() == 1 {
        return Ok((found[0].clone(), raw.trim().to_string()));
    }
    Err(LabelParseFailure {
        found_labels: found,
    })
}

static VERDICT_HEAD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:verdict\s*[:\-]\s*)?(accept(?:ed)?|reject(?:ed)?)\b").expect("valid regex")
});
static ITEM_ISSUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*[-*•]?\s*item\s+#?([A-Za-z0-9_.\-]+?)\s*[:\-–]?\s+(\S.*)$")
        .expect("valid regex")
});

pub const UNPARSEABLE_VERDICT: &str = "unparseable verdict";
const EMPTY_REJECTION: &str = "rejected without critique";

/// Reads an ACCEPT/REJECT reply. Anything else is a conservative rejection.
pub fn parse_verdict(raw: &str, stage: Stage) -> Verdict {
    let reject = |critique: String| {
        let item_issues = if stage == Stage::Scale {
            critique
                .split(['\n', ';'])
                .filter_map(|seg| ITEM_ISSUE.captures(seg))
                .map(|c| ItemIssue {
                    item_id: c[1].trim_end_matches('.').to_string(),
                    issue: c[2].trim().to_string(),
                })
                .collect()
        } else {
            Vec::new()
        };
        Verdict {
            stage,
            accepted: false,
            critique,
            item_issues,
        }
    };

    let mut lines = raw.lines();
    let head = loop {
        match lines.next() {
            Some(l) => {
                let l = l
                    .trim()
                    .trim_matches(|c: char| matches!(c, '*' | '#' | '`' | '_'))
                    .trim();
                if !l.is_empty() {
                    break l;
                }
            }
            None => return reject(UNPARSEABLE_VERDICT.to_string()),
        }
    };
    let Some(caps) = VERDICT_HEAD.captures(head) else {
        return reject(UNPARSEABLE_VERDICT.to_string());
    };
    let word = caps[1].to_lowercase();
    let first_rest = head[caps.get(0).unwrap().end()..]
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ':' | '-' | '.' | '*'));
    let mut critique = first_rest.trim().to_string();
    let remaining: Vec<&str> = lines.collect();
    let remaining = remaining.join("\n");
    if !remaining.trim().is_empty() {
        if !critique.is_empty() {
            critique.push('\n');
        }
        critique.push_str(remaining.trim());
    }
    if word.starts_with("accept") {
        Verdict {
            stage,
            accepted: true,
            critique,
            item_issues: Vec::new(),
        }
    } else {
        if critique.is_empty() {
            critique = EMPTY_REJECTION.to_string();
        }
        reject(critique)
    }
}
