mod common;

use common::*;
use maims_core::llm::TransportError;
use maims_core::pipeline::Stage;
use maims_core::{LlmError, Mode, Pipeline, PipelineConfig, Role, Status};

fn config(mode: Mode, max_retries: u32) -> PipelineConfig {
    PipelineConfig {
        mode,
        max_retries,
        workers: 2,
        ..PipelineConfig::default()
    }
}

#[test]
fn scale_stage_is_forced_after_max_retries() {
    let b = backend(|role, prompt| match role {
        Role::Discriminator if is_scale_review(prompt) => {
            Ok("REJECT:\nitem 1: over-reads the post".into())
        }
        _ => happy_path(role, prompt),
    });
    let cfg = config(Mode::Full, 2);
    let post = &corpus().posts[0];
    let rec = Pipeline::new(&b, &cfg).run_pipeline(post, &scale(), &task());

    assert_eq!(b.counters().get(Role::Poster).transport, 3);
    assert_eq!(rec.calls.poster, 3);
    assert_eq!(rec.calls.scale_discriminator, 3);
    let scale_verdicts: Vec<_> = rec
        .verdicts
        .iter()
        .filter(|v| v.stage == Stage::Scale)
        .collect();
    assert_eq!(scale_verdicts.len(), 3);
    assert!(scale_verdicts.iter().all(|v| !v.accepted));
    assert_eq!(scale_verdicts[0].item_issues[0].item_id, "1");
    assert_eq!(rec.status, Status::ForcedAfterMaxRetries);
    let sr = rec.scale_response.unwrap();
    assert_eq!(sr.attempts, 3);
    assert_eq!(sr.verdict_history.len(), 3);
    // Step 2 still ran on the forced scale.
    assert_eq!(rec.analysis.label, "Yes");
}

#[test]
fn analysis_stage_is_forced_after_max_retries() {
    let b = backend(|role, prompt| match role {
        Role::Discriminator if !is_scale_review(prompt) => Ok("REJECT: negative inference".into()),
        _ => happy_path(role, prompt),
    });
    let cfg = config(Mode::Full, 2);
    let rec = Pipeline::new(&b, &cfg).run_pipeline(&corpus().posts[1], &scale(), &task());

    assert_eq!(b.counters().get(Role::Analysis).transport, 3);
    assert_eq!(
        b.counters().get(Role::Poster).transport,
        1,
        "step 1 is not re-run"
    );
    assert_eq!(rec.calls.analysis_discriminator, 3);
    assert_eq!(
        rec.verdicts
            .iter()
            .filter(|v| v.stage == Stage::Analysis)
            .count(),
        3
    );
    assert_eq!(rec.status, Status::ForcedAfterMaxRetries);
}

#[test]
fn retry_bound_follows_max_retries() {
    for max in [0u32, 1, 4] {
        let b = backend(|role, prompt| match role {
            Role::Discriminator => Ok("REJECT: no".into()),
            _ => happy_path(role, prompt),
        });
        let cfg = config(Mode::Full, max);
        let rec = Pipeline::new(&b, &cfg).run_pipeline(&corpus().posts[0], &scale(), &task());
        assert_eq!(rec.calls.poster, max + 1);
        assert_eq!(rec.calls.analysis, max + 1);
        assert_eq!(
            b.counters().get(Role::Discriminator).transport,
            2 * (max as u64 + 1)
        );
        assert_eq!(rec.status, Status::ForcedAfterMaxRetries);
    }
}

#[test]
fn rejection_then_acceptance_carries_the_critique() {
    let b = backend(|role, prompt| match role {
        Role::Discriminator if is_scale_review(prompt) && !prompt.contains("PREVIOUS FEEDBACK") => {
            Ok("REJECT:\nitem 1: the post does not describe low mood".into())
        }
        Role::Poster if prompt.contains("REVIEWER FEEDBACK") => {
            assert!(prompt.contains("item 1: the post does not describe low mood"));
            Ok(GOOD_SCALE.replace("indirect_mention | 1", "indirect_mention | 0"))
        }
        _ => happy_path(role, prompt),
    });
    let cfg = config(Mode::Full, 2);
    let rec = Pipeline::new(&b, &cfg).run_pipeline(&corpus().posts[0], &scale(), &task());
    assert_eq!(rec.status, Status::AcceptedAfterRetry);
    assert_eq!(rec.calls.poster, 2);
    let sr = rec.scale_response.unwrap();
    assert_eq!(sr.items[0].selected_option.as_deref(), Some("0"));
    assert_eq!(sr.attempts, 2);
}

#[test]
fn missing_item_triggers_exactly_one_repair() {
    // Repaired on the second try.
    let b = backend(|role, prompt| match role {
        Role::Poster if prompt.contains("could not be read") => {
            assert!(prompt.contains("missing items: 2"), "{prompt}");
            Ok(GOOD_SCALE.into())
        }
        Role::Poster => Ok(INCOMPLETE_SCALE.into()),
        _ => happy_path(role, prompt),
    });
    let cfg = config(Mode::Full, 2);
    let rec = Pipeline::new(&b, &cfg).run_pipeline(&corpus().posts[0], &scale(), &task());
    assert_eq!(rec.calls.poster, 2);
    assert_eq!(rec.status, Status::Accepted);

    // Still broken after the repair: stop, fall back, mark failed.
    let b = backend(|role, prompt| match role {
        Role::Poster => Ok(INCOMPLETE_SCALE.into()),
        _ => happy_path(role, prompt),
    });
    let rec = Pipeline::new(&b, &cfg).run_pipeline(&corpus().posts[0], &scale(), &task());
    assert_eq!(b.counters().get(Role::Poster).transport, 2);
    assert_eq!(b.counters().get(Role::Analysis).transport, 0);
    assert_eq!(b.counters().get(Role::Discriminator).transport, 0);
    assert_eq!(rec.status, Status::Failed);
    assert_eq!(rec.analysis.label, "No", "first non-positive label");
    assert!(rec.error.unwrap().contains("missing items: 2"));
}

#[test]
fn unparseable_label_falls_back_after_one_repair() {
    let b = backend(|role, prompt| match role {
        Role::Analysis => Ok("It is hard to say.".into()),
        _ => happy_path(role, prompt),
    });
    let cfg = config(Mode::Full, 2);
    let rec = Pipeline::new(&b, &cfg).run_pipeline(&corpus().posts[0], &scale(), &task());
    assert_eq!(rec.calls.analysis, 2);
    assert_eq!(rec.calls.analysis_discriminator, 0);
    assert_eq!(rec.status, Status::Failed);
    assert_eq!(rec.analysis.label, "No");
}

#[test]
fn ablation_modes_are_pure() {
    let c = corpus();
    assert_eq!(c.posts.len(), 5);

    let b = backend(happy_path);
    let records = Pipeline::new(&b, &config(Mode::NoScale, 2))
        .run_corpus(&c, &scale(), &task())
        .unwrap();
    assert_eq!(b.counters().get(Role::Poster).calls, 0);
    assert!(records
        .iter()
        .all(|r| r.calls.poster == 0 && r.calls.scale_discriminator == 0));
    assert!(records.iter().all(|r| r.scale_response.is_none()));
    assert!(records
        .iter()
        .all(|r| r.verdicts.iter().all(|v| v.stage == Stage::Analysis)));

    let b = backend(|role, prompt| {
        assert!(!prompt.contains("COMPLETED SCALE") || role != Role::Analysis);
        happy_path(role, prompt)
    });
    let records = Pipeline::new(&b, &config(Mode::NoScale, 2))
        .run_corpus(&c, &scale(), &task())
        .unwrap();
    assert_eq!(records.len(), 5);

    let b = backend(happy_path);
    let records = Pipeline::new(&b, &config(Mode::NoDiscriminator, 2))
        .run_corpus(&c, &scale(), &task())
        .unwrap();
    assert_eq!(b.counters().get(Role::Discriminator).calls, 0);
    for r in &records {
        assert!(r.verdicts.is_empty());
        assert!(r
            .scale_response
            .as_ref()
            .unwrap()
            .verdict_history
            .is_empty());
        assert_eq!(r.status, Status::Accepted);
    }
}

#[test]
fn no_scale_prompts_never_mention_the_scale() {
    let b = backend(|role, prompt| {
        assert!(!prompt.to_lowercase().contains("scale"), "{role}: {prompt}");
        happy_path(role, prompt)
    });
    let records = Pipeline::new(&b, &config(Mode::NoScale, 2))
        .run_corpus(&corpus(), &scale(), &task())
        .unwrap();
    assert!(records.iter().all(|r| r.analysis.cited_items.is_empty()));
}

#[test]
fn records_keep_corpus_order_and_are_deterministic() {
    let run = |workers| {
        let b = backend(happy_path);
        let cfg = PipelineConfig {
            workers,
            ..config(Mode::Full, 2)
        };
        Pipeline::new(&b, &cfg)
            .run_corpus(&corpus(), &scale(), &task())
            .unwrap()
            .into_iter()
            .map(|mut r| {
                r.meta.started_at.clear();
                r.meta.wall_seconds = 0.0;
                serde_json::to_string(&r).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let one = run(1);
    assert_eq!(one, run(4));
    let ids: Vec<String> = one
        .iter()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["post_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(ids, ["a", "b", "c", "d", "e"]);
}

#[test]
fn backend_errors_abort_the_corpus_run() {
    let b = backend(|role, prompt| {
        if prompt.contains("weather") {
            Err(TransportError::Transient("connection refused".into()))
        } else {
            happy_path(role, prompt)
        }
    });
    let err = Pipeline::new(&b, &config(Mode::Full, 2))
        .run_corpus(&corpus(), &scale(), &task())
        .unwrap_err();
    assert!(matches!(
        err,
        maims_core::pipeline::PipelineError::Backend(LlmError::BackendUnreachable {
            attempts: 1,
            ..
        })
    ));
}

#[test]
fn run_pipeline_folds_backend_errors_into_failed_records() {
    let b = backend(|_, _| {
        Err(TransportError::Rejected {
            status: 401,
            body: "bad key".into(),
        })
    });
    let rec = Pipeline::new(&b, &config(Mode::Full, 2)).run_pipeline(
        &corpus().posts[0],
        &scale(),
        &task(),
    );
    assert_eq!(rec.status, Status::Failed);
    assert_eq!(rec.analysis.label, "No");
    assert!(rec.error.unwrap().contains("401"));
}
