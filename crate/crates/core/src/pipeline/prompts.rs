use std::fmt::Write;

use crate::corpus::{Post, TaskSpec};
use crate::scales::MentalScale;
use crate::templates::{PromptTemplates, TemplateKind};

use super::{AnalysisResult, MentionCategory, ScaleResponse};

fn render(templates: &PromptTemplates, kind: TemplateKind, vars: &[(&str, &str)]) -> String {
    // Templates only parse with known placeholders, and callers pass all of them.
    templates
        .get(kind)
        .render(vars)
        .expect("every declared placeholder is supplied")
}

fn feedback_section(heading: &str, text: Option<&str>) -> String {
    match text.map(str::trim) {
        Some(t) if !t.is_empty() => format!("\n{heading}\n{t}\n"),
        _ => String::new(),
    }
}

fn critique_section(critique: Option<&str>) -> String {
    feedback_section("REVIEWER FEEDBACK (address every point):", critique)
}

fn previous_feedback_section(previous: Option<&str>) -> String {
    feedback_section(
        "PREVIOUS FEEDBACK (from earlier reviews of this post):",
        previous,
    )
}

/// Numbered item listing; the criteria line is omitted for items without criteria.
pub fn render_scale_items(scale: &MentalScale) -> String {
    let mut out = String::new();
    for item in &scale.items {
        let _ = writeln!(out, "Item {}: {}", item.item_id, item.prompt.trim());
        if !item.criteria.trim().is_empty() {
            let _ = writeln!(out, "  Criteria: {}", item.criteria.trim());
        }
        let _ = writeln!(out, "  Options:");
        for opt in &item.options {
            let _ = writeln!(out, "    {}) {}", opt.code, opt.text.trim());
        }
    }
    out.trim_end().to_string()
}

pub fn render_completed_scale(response: &ScaleResponse, scale: &MentalScale) -> String {
    let mut out = String::new();
    for ir in &response.items {
        let _ = write!(out, "Item {} [{}]", ir.item_id, ir.mention.token());
        if let Some(code) = &ir.selected_option {
            let text = scale
                .item(&ir.item_id)
                .and_then(|i| i.option(code))
                .map(|o| o.text.trim())
                .unwrap_or("");
            let _ = write!(out, " option {code}: {text}");
        }
        out.push('\n');
        if ir.mention == MentionCategory::NoMention {
            continue;
        }
        if !ir.evidence_quotes.is_empty() {
            let quotes: Vec<String> = ir
                .evidence_quotes
                .iter()
                .zip(ir.evidence_verified.iter().chain(std::iter::repeat(&false)))
                .map(|(q, ok)| {
                    let mark = if *ok { "verified" } else { "NOT FOUND IN POST" };
                    format!("\"{q}\" [{mark}]")
                })
                .collect();
            let _ = writeln!(out, "  evidence: {}", quotes.join("; "));
        }
        if !ir.rationale.trim().is_empty() {
            let _ = writeln!(out, "  reason: {}", ir.rationale.trim());
        }
    }
    out.trim_end().to_string()
}

fn evidence_report(response: &ScaleResponse) -> String {
    let failures: Vec<String> = response
        .unverified_quotes()
        .map(|(id, q)| format!("- item {id}: \"{q}\""))
        .collect();
    if failures.is_empty() {
        "All quoted evidence was found in the post.".to_string()
    } else {
        format!(
            "The following quotes were NOT found in the post:\n{}",
            failures.join("\n")
        )
    }
}

pub fn build_step1_prompt(
    templates: &PromptTemplates,
    post: &Post,
    scale: &MentalScale,
    critique: Option<&str>,
) -> String {
    let items = render_scale_items(scale);
    let count = scale.items.len().to_string();
    let critique = critique_section(critique);
    render(
        templates,
        TemplateKind::Step1,
        &[
            ("post", post.text.trim()),
            ("scale_name", &scale.name),
            ("scale_items", &items),
            ("item_count", &count),
            ("critique", &critique),
        ],
    )
}

pub fn build_step1_repair_prompt(
    templates: &PromptTemplates,
    post: &Post,
    scale: &MentalScale,
    previous_output: &str,
    problems: &str,
) -> String {
    let items = render_scale_items(scale);
    let count = scale.items.len().to_string();
    render(
        templates,
        TemplateKind::Step1Repair,
        &[
            ("post", post.text.trim()),
            ("scale_name", &scale.name),
            ("scale_items", &items),
            ("item_count", &count),
            ("previous_output", previous_output.trim()),
            ("problems", problems),
        ],
    )
}

pub fn build_scale_discriminator_prompt(
    templates: &PromptTemplates,
    post: &Post,
    scale: &MentalScale,
    response: &ScaleResponse,
    previous_feedback: Option<&str>,
) -> String {
    let items = render_scale_items(scale);
    let completed = render_completed_scale(response, scale);
    let report = evidence_report(response);
    let previous = previous_feedback_section(previous_feedback);
    render(
        templates,
        TemplateKind::ScaleDiscriminator,
        &[
            ("post", post.text.trim()),
            ("scale_name", &scale.name),
            ("scale_items", &items),
            ("completed_scale", &completed),
            ("evidence_report", &report),
            ("previous_feedback", &previous),
        ],
    )
}

/// Step 2 prompt; without a scale response only the post is shown.
pub fn build_step2_prompt(
    templates: &PromptTemplates,
    post: &Post,
    scale: Option<(&ScaleResponse, &MentalScale)>,
    task: &TaskSpec,
    critique: Option<&str>,
) -> String {
    let labels = task.labels.join(", ");
    let critique = critique_section(critique);
    match scale {
        Some((response, scale)) => {
            let completed = render_completed_scale(response, scale);
            render(
                templates,
                TemplateKind::Step2,
                &[
                    ("post", post.text.trim()),
                    ("question", &task.question),
                    ("labels", &labels),
                    ("scale_name", &scale.name),
                    ("completed_scale", &completed),
                    ("critique", &critique),
                ],
            )
        }
        None => render(
            templates,
            TemplateKind::Step2NoScale,
            &[
                ("post", post.text.trim()),
                ("question", &task.question),
                ("labels", &labels),
                ("critique", &critique),
            ],
        ),
    }
}

pub fn build_step2_repair_prompt(
    templates: &PromptTemplates,
    task: &TaskSpec,
    previous_output: &str,
) -> String {
    let labels = task.labels.join(", ");
    render(
        templates,
        TemplateKind::Step2Repair,
        &[
            ("question", &task.question),
            ("labels", &labels),
            ("previous_output", previous_output.trim()),
        ],
    )
}

pub fn build_analysis_discriminator_prompt(
    templates: &PromptTemplates,
    post: &Post,
    scale: Option<(&ScaleResponse, &MentalScale)>,
    task: &TaskSpec,
    result: &AnalysisResult,
    previous_feedback: Option<&str>,
) -> String {
    let labels = task.labels.join(", ");
    let section = match scale {
        Some((response, scale)) => format!(
            "\nCOMPLETED SCALE ({}):\n{}\n",
            scale.name,
            render_completed_scale(response, scale)
        ),
        None => String::new(),
    };
    let previous = previous_feedback_section(previous_feedback);
    render(
        templates,
        TemplateKind::AnalysisDiscriminator,
        &[
            ("post", post.text.trim()),
            ("question", &task.question),
            ("labels", &labels),
            ("completed_scale_section", &section),
            ("label", &result.label),
            ("explanation", result.explanation.trim()),
            ("previous_feedback", &previous),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ItemResponse;
    use crate::scales::fixtures::three_item_scale;

    fn post() -> Post {
        Post {
            post_id: "p1".into(),
            text: "I feel stuck in a swamp.".into(),
            gold_label: Some("Yes".into()),
        }
    }

    fn task() -> TaskSpec {
        TaskSpec {
            task_id: "dr".into(),
            question: "Does the poster suffer from depression?".into(),
            labels: vec!["Yes".into(), "No".into()],
            positive_label: "Yes".into(),
            scale_id: "sample".into(),
        }
    }

    fn completed() -> ScaleResponse {
        ScaleResponse {
            scale_id: "sample".into(),
            post_id: "p1".into(),
            items: vec![
                ItemResponse {
                    item_id: "13".into(),
                    mention: MentionCategory::DirectMention,
                    selected_option: Some("1".into()),
                    rationale: "feels stuck".into(),
                    evidence_quotes: vec!["stuck in a swamp".into(), "invented".into()],
                    evidence_verified: vec![true, false],
                },
                ItemResponse {
                    item_id: "2".into(),
                    mention: MentionCategory::NoMention,
                    selected_option: None,
                    rationale: String::new(),
                    evidence_quotes: vec![],
                    evidence_verified: vec![],
                },
            ],
            attempts: 1,
            verdict_history: vec![],
        }
    }

    #[test]
    fn step1_lists_every_item_and_layout() {
        let t = PromptTemplates::defaults();
        let scale = three_item_scale();
        let p = build_step1_prompt(&t, &post(), &scale, None);
        for item in &scale.items {
            assert!(p.contains(&format!("Item {}: {}", item.item_id, item.prompt)));
        }
        assert!(p.contains("```scale"));
        assert!(p.contains("direct_mention|indirect_mention|no_mention"));
        assert!(p.contains("I feel stuck in a swamp."));
        assert!(!p.contains("REVIEWER FEEDBACK"));
        // empty criteria produce no criteria line
        assert!(!p.contains("Criteria:"));
    }

    #[test]
    fn step1_critique_and_criteria() {
        let t = PromptTemplates::defaults();
        let mut scale = three_item_scale();
        scale.items[0].criteria = "Consider the last two weeks.".into();
        let p = build_step1_prompt(&t, &post(), &scale, Some("item 13: evidence not in post"));
        assert!(p.contains("REVIEWER FEEDBACK"));
        assert!(p.contains("item 13: evidence not in post"));
        assert_eq!(p.matches("Criteria:").count(), 1);
    }

    #[test]
    fn step2_with_and_without_scale() {
        let t = PromptTemplates::defaults();
        let scale = three_item_scale();
        let r = completed();
        let with = build_step2_prompt(&t, &post(), Some((&r, &scale)), &task(), None);
        assert!(with.contains("COMPLETED SCALE"));
        assert!(with.contains("Item 13 [direct_mention] option 1: I find it more difficult"));
        assert!(with.contains("Does the poster suffer from depression?"));
        assert!(with.contains("Answer: <answer>."));

        let without = build_step2_prompt(&t, &post(), None, &task(), Some("too strong"));
        assert!(!without.contains("COMPLETED SCALE"));
        assert!(!without.contains("Item 13"));
        assert!(!without.to_lowercase().contains("scale"));
        assert!(without.contains("REVIEWER FEEDBACK"));
    }

    #[test]
    fn scale_discriminator_lists_failed_quotes() {
        let t = PromptTemplates::defaults();
        let scale = three_item_scale();
        let p = build_scale_discriminator_prompt(&t, &post(), &scale, &completed(), None);
        assert!(p.contains("- item 13: \"invented\""));
        assert!(p.contains("NOT FOUND IN POST"));
        assert!(!p.contains("PREVIOUS FEEDBACK"));
        let p2 =
            build_scale_discriminator_prompt(&t, &post(), &scale, &completed(), Some("fix 13"));
        assert!(p2.contains("PREVIOUS FEEDBACK"));
    }

    #[test]
    fn analysis_discriminator_sections() {
        let t = PromptTemplates::defaults();
        let scale = three_item_scale();
        let result = AnalysisResult {
            label: "Yes".into(),
            explanation: "sadness".into(),
            cited_items: vec![],
        };
        let r = completed();
        let with = build_analysis_discriminator_prompt(
            &t,
            &post(),
            Some((&r, &scale)),
            &task(),
            &result,
            None,
        );
        assert!(with.contains("COMPLETED SCALE"));
        assert!(with.contains("Answer: Yes"));
        let without =
            build_analysis_discriminator_prompt(&t, &post(), None, &task(), &result, None);
        assert!(!without.contains("COMPLETED SCALE"));
    }
}
