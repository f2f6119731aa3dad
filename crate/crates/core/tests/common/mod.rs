#![allow(dead_code)]

use std::sync::Arc;

use maims_core::llm::{Transport, TransportError};
use maims_core::scales::{AnswerOption, ScaleItem};
use maims_core::{Backend, Corpus, MentalScale, Post, RetryPolicy, Role, RoleConfig, TaskSpec};

pub type Responder = dyn Fn(Role, &str) -> Result<String, TransportError> + Send + Sync;

/// Answers every request through a closure over (role, prompt).
pub struct FnTransport(pub Box<Responder>);

impl Transport for FnTransport {
    fn send(
        &self,
        config: &RoleConfig,
        prompt: &str,
        _digest: &str,
    ) -> Result<String, TransportError> {
        (self.0)(config.role, prompt)
    }
}

pub fn configs() -> [RoleConfig; 3] {
    Role::ALL.map(|r| RoleConfig::mock(r, "unused.json"))
}

pub fn backend<F>(f: F) -> Backend
where
    F: Fn(Role, &str) -> Result<String, TransportError> + Send + Sync + 'static,
{
    let t: Arc<dyn Transport> = Arc::new(FnTransport(Box::new(f)));
    let [p, a, d] = configs();
    Backend::with_transports(
        [(p, t.clone()), (a, t.clone()), (d, t)],
        None,
        RetryPolicy::no_delay(0),
    )
    .unwrap()
}

fn item(id: &str, prompt: &str, texts: [&str; 4]) -> ScaleItem {
    ScaleItem {
        item_id: id.into(),
        prompt: prompt.into(),
        criteria: String::new(),
        options: texts
            .iter()
            .enumerate()
            .map(|(i, t)| AnswerOption {
                code: i.to_string(),
                text: t.to_string(),
                value: Some(i as f64),
            })
            .collect(),
    }
}

pub fn scale() -> MentalScale {
    MentalScale {
        scale_id: "mood".into(),
        name: "Mood Inventory".into(),
        version: "1".into(),
        description: String::new(),
        items: vec![
            item(
                "1",
                "Low mood",
                [
                    "Mood as usual.",
                    "Down some of the time.",
                    "Down most of the time.",
                    "Down all the time.",
                ],
            ),
            item(
                "2",
                "Sleep",
                [
                    "Sleep as usual.",
                    "Sleep somewhat worse.",
                    "Lie awake for hours.",
                    "Hardly sleep.",
                ],
            ),
            item(
                "13",
                "Indecisiveness",
                [
                    "I make decisions about as well as I ever could.",
                    "I find it more difficult to make decisions than usual.",
                    "I have much greater difficulty in making decisions than I used to.",
                    "I have trouble making any decisions.",
                ],
            ),
        ],
    }
}

pub fn task() -> TaskSpec {
    TaskSpec {
        task_id: "dr".into(),
        question: "Does the poster suffer from depression?".into(),
        labels: vec!["Yes".into(), "No".into()],
        positive_label: "Yes".into(),
        scale_id: "mood".into(),
    }
}

pub fn post(id: &str, text: &str, label: &str) -> Post {
    Post {
        post_id: id.into(),
        text: text.into(),
        gold_label: Some(label.into()),
    }
}

pub fn corpus() -> Corpus {
    Corpus {
        corpus_id: "five".into(),
        posts: vec![
            post(
                "a",
                "I feel tired and I can't choose what to eat anymore.",
                "Yes",
            ),
            post("b", "I feel tired after the marathon but happy.", "No"),
            post(
                "c",
                "I feel tired every single morning and everything is grey.",
                "Yes",
            ),
            post("d", "I feel tired of this weather, bring on summer.", "No"),
            post(
                "e",
                "I feel tired of living and I lie awake every night.",
                "Yes",
            ),
        ],
    }
}

/// A well-formed completion for any post containing "I feel tired".
pub const GOOD_SCALE: &str = "```scale
1 | indirect_mention | 1 | evidence: \"I feel tired\" | reason: tiredness
2 | no_mention | - | evidence: - | reason: not discussed
13 | no_mention | - | evidence: - | reason: not discussed
```";

/// Same as [`GOOD_SCALE`] with item 2 missing.
pub const INCOMPLETE_SCALE: &str = "```scale
1 | indirect_mention | 1 | evidence: \"I feel tired\" | reason: tiredness
13 | no_mention | - | evidence: - | reason: not discussed
```";

pub fn is_scale_review(prompt: &str) -> bool {
    prompt.contains("COMPLETED QUESTIONNAIRE:")
}

/// Post-aware default: "Yes" when the gold label in [`corpus`] would be Yes.
pub fn analysis_answer(prompt: &str) -> String {
    let yes = [
        "choose what to eat",
        "everything is grey",
        "tired of living",
    ];
    if yes.iter().any(|k| prompt.contains(k)) {
        "Answer: Yes. Item 1 shows persistent low mood.".into()
    } else {
        "Answer: No. Nothing beyond ordinary tiredness.".into()
    }
}

/// Accepts everything and answers every role sensibly.
pub fn happy_path(role: Role, prompt: &str) -> Result<String, TransportError> {
    Ok(match role {
        Role::Poster => GOOD_SCALE.to_string(),
        Role::Analysis => analysis_answer(prompt),
        Role::Discriminator => "ACCEPT".to_string(),
    })
}
