#![allow(dead_code)]

use std::path::PathBuf;

use promptmix::backends::{ChatMessage, Role};
use promptmix::data::{ClassSpec, DatasetSpec};
use promptmix::mixgen::{build_generation_prompt, Alpha, MixupAssignment};
use promptmix::relabel::build_relabel_prompt;

pub const FIGURE_SENTENCE: &str = "Do I need to be over a certain age to use an ATM?";

pub fn banking(two_shot: bool) -> DatasetSpec {
    let class = |name: &str, description: &str, examples: [&str; 2]| {
        ClassSpec::new(name, description, if two_shot { examples.to_vec() } else { Vec::new() })
    };
    DatasetSpec::new(
        "banking",
        vec![
            class(
                "age_limit",
                "Questions about the minimum age needed to open an account or use a product.",
                ["How old do I need to be to open an account?", "Can my 15 year old get a debit card?"],
            ),
            class(
                "atm_support",
                "Questions about using ATMs, finding one, or problems at an ATM.",
                ["Where is the nearest ATM I can use?", "The ATM kept my card, what should I do?"],
            ),
            class(
                "card_arrival",
                "Questions about when a newly ordered card will be delivered.",
                ["When will my new card arrive?", "My card still has not shown up in the mail."],
            ),
            class(
                "exchange_rate",
                "Questions about the exchange rates applied to foreign currency transactions.",
                ["What exchange rate do you use for euros?", "Do exchange rates change on the weekend?"],
            ),
        ],
    )
    .unwrap()
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Text form of a prompt used in golden files.
pub fn render_messages(messages: &[ChatMessage]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out.push_str(&format!("=== {role} ===\n{}\n", m.content));
    }
    out
}

/// Every golden case as `(file name, rendered prompt)`.
pub fn golden_cases() -> Vec<(String, String)> {
    let mut cases = Vec::new();
    for (shot, two_shot) in [("2shot", true), ("zeroshot", false)] {
        let ds = banking(two_shot);
        for (mix, mixup) in [("mixup", true), ("nomixup", false)] {
            for t in [2, 4] {
                let subset: Vec<String> = ds.class_names().into_iter().take(t).collect();
                let assignment = MixupAssignment {
                    majority_class: "age_limit".into(),
                    minority_class: mixup.then(|| "atm_support".into()),
                    alpha: mixup.then(|| Alpha::from_twentieths(15).unwrap()),
                    subset,
                };
                let prompt = build_generation_prompt(&ds, &assignment, 4).unwrap();
                cases.push((format!("generation_{shot}_{mix}_t{t}.txt"), render_messages(&prompt)));
            }
        }
        let candidates = vec!["age_limit".to_string(), "atm_support".to_string()];
        let prompt = build_relabel_prompt(&ds, &candidates, FIGURE_SENTENCE).unwrap();
        cases.push((format!("relabel_{shot}_c2.txt"), render_messages(&prompt)));
        let all = ds.class_names();
        let prompt = build_relabel_prompt(&ds, &all, FIGURE_SENTENCE).unwrap();
        cases.push((format!("relabel_{shot}_c4.txt"), render_messages(&prompt)));
    }
    cases
}

/// Compares against the committed file, or rewrites it when
/// `UPDATE_GOLDEN=1`. Returns the names that differ.
pub fn check_goldens() -> Vec<String> {
    let update = std::env::var("UPDATE_GOLDEN").is_ok_and(|v| v == "1");
    let dir = golden_dir();
    let mut mismatched = Vec::new();
    for (name, rendered) in golden_cases() {
        let path = dir.join(&name);
        if update {
            std::fs::write(&path, &rendered).unwrap();
            continue;
        }
        match std::fs::read(&path) {
            Ok(bytes) if bytes == rendered.as_bytes() => {}
            _ => mismatched.push(name),
        }
    }
    mismatched
}
