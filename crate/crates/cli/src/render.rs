use std::fmt::Write;

use maims_core::pipeline::Stage;
use maims_core::{FinalRecord, MentalScale};

/// Python-style string literal, as in `('13', ['direct_mention', ...])`.
fn py_str(s: &str) -> String {
    if s.contains('\'') && !s.contains('"') {
        format!("\"{s}\"")
    } else {
        format!("'{}'", s.replace('\'', "\\'"))
    }
}

fn indent(text: &str, pad: &str) -> String {
    text.lines()
        .map(|l| format!("{pad}{l}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Human-readable view of one record. Option texts are looked up in
/// `scale` when it is available; otherwise only the codes are shown.
pub fn render_record(record: &FinalRecord, scale: Option<&MentalScale>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "post {}  mode {}  status {}",
        record.post_id,
        record.mode,
        record.status.as_str()
    );
    let _ = writeln!(out, "\nPOST:\n{}", indent(record.post_text.trim(), "  "));

    if let Some(sr) = &record.scale_response {
        let _ = writeln!(
            out,
            "\nMS Record ({}, attempt {}):",
            sr.scale_id, sr.attempts
        );
        for item in &sr.items {
            let mut fields = vec![py_str(item.mention.token())];
            if let Some(code) = &item.selected_option {
                let text = scale
                    .and_then(|s| s.item(&item.item_id))
                    .and_then(|i| i.option(code))
                    .map(|o| format!("{code}: {}", o.text.trim()))
                    .unwrap_or_else(|| code.clone());
                fields.push(py_str(&text));
            }
            let _ = writeln!(
                out,
                "  ({}, [{}])",
                py_str(&item.item_id),
                fields.join(", ")
            );
            for (i, quote) in item.evidence_quotes.iter().enumerate() {
                let mark = if item.evidence_verified.get(i).copied().unwrap_or(false) {
                    "✓ verified"
                } else {
                    "⚠ UNVERIFIED"
                };
                let _ = writeln!(out, "      evidence: \"{quote}\"  {mark}");
            }
            if !item.rationale.trim().is_empty() {
                let _ = writeln!(out, "      reason: {}", item.rationale.trim());
            }
        }
    }

    if !record.verdicts.is_empty() {
        let _ = writeln!(out, "\nVerdicts:");
        for (i, v) in record.verdicts.iter().enumerate() {
            let stage = match v.stage {
                Stage::Scale => "scale",
                Stage::Analysis => "analysis",
            };
            let head = if v.accepted { "ACCEPT" } else { "REJECT" };
            let _ = write!(out, "  {}. [{stage}] {head}", i + 1);
            if v.critique.trim().is_empty() {
                out.push('\n');
            } else {
                let _ = writeln!(out, ": {}", indent(v.critique.trim(), "     ").trim_start());
            }
        }
    }

    let _ = writeln!(out, "\nAnswer: {}", record.analysis.label);
    if !record.analysis.explanation.trim().is_empty() {
        let _ = writeln!(out, "{}", indent(record.analysis.explanation.trim(), "  "));
    }
    if !record.analysis.cited_items.is_empty() {
        let _ = writeln!(
            out,
            "Cited items: {}",
            record.analysis.cited_items.join(", ")
        );
    }
    if let Some(err) = &record.error {
        let _ = writeln!(out, "\nError: {err}");
    }
    out
}
