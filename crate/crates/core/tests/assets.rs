use std::path::PathBuf;

use maims_core::corpus::parse_corpus;
use maims_core::scales::parse_scale;
use maims_core::{load_corpus, load_scale, load_task, validate_scale, CorpusError, ScaleError};

fn asset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

#[test]
fn bundled_assets_are_consistent() {
    let scale = load_scale(asset("sample_scale.json")).unwrap();
    assert!(validate_scale(&scale).is_empty());
    assert_eq!(scale.total_range(), Some((0.0, 9.0)));
    let task = load_task(asset("sample_task.json")).unwrap();
    assert_eq!(task.scale_id, scale.scale_id);
    let corpus = load_corpus(asset("sample_corpus.jsonl"), Some(&task), true).unwrap();
    assert!(corpus.len() >= 10);
    assert!(corpus.is_labeled());
}

#[test]
fn violation_fixtures_report_exactly_one_problem() {
    for (file, expected) in [
        ("invalid/duplicate_item_id.json", "duplicate item id: 2"),
        (
            "invalid/single_option_item.json",
            "item 2: fewer than 2 options",
        ),
        (
            "invalid/mixed_values.json",
            "item 1: mixed valued and unvalued options",
        ),
    ] {
        match load_scale(asset(file)) {
            Err(ScaleError::MalformedScale(v)) => assert_eq!(v, [expected], "{file}"),
            other => panic!("{file}: {other:?}"),
        }
    }
    match load_task(asset("invalid/bad_positive_label.json")) {
        Err(CorpusError::InvalidTask(v)) => assert_eq!(v.len(), 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_files_name_the_path() {
    let err = load_scale("/no/such/scale.json").unwrap_err();
    assert!(matches!(err, ScaleError::FileNotFound(ref p) if p == "/no/such/scale.json"));
    assert!(load_corpus("/no/such/corpus.jsonl", None, false)
        .unwrap_err()
        .to_string()
        .contains("/no/such/corpus.jsonl"));
}

#[test]
fn malformed_inputs_are_rejected() {
    assert!(matches!(
        parse_scale("{not json"),
        Err(ScaleError::MalformedScale(_))
    ));
    let err = parse_corpus(
        "c",
        "{\"post_id\": \"a\", \"text\": \"x\"}\n{\"post_id\": \"a\", \"text\": \"y\"}\n",
        None,
        false,
    )
    .unwrap_err();
    assert_eq!(err, CorpusError::DuplicateId("a".into()));
}
