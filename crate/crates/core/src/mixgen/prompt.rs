use crate::backends::ChatMessage;
use crate::data::DatasetSpec;
use crate::template;

use super::{MixgenError, MixupAssignment};

pub fn generation_system_prompt() -> &'static str {
    template::GENERATION_SYSTEM.trim_end()
}

/// Two-part generation prompt: the class listing (names, descriptions and
/// seed examples of every subset class) followed by the instruction.
pub fn build_generation_prompt(
    dataset: &DatasetSpec,
    assignment: &MixupAssignment,
    n: usize,
) -> Result<Vec<ChatMessage>, MixgenError> {
    build_generation_prompt_with(dataset, assignment, n, true)
}

/// Like [`build_generation_prompt`], optionally leaving out class
/// descriptions.
pub fn build_generation_prompt_with(
    dataset: &DatasetSpec,
    assignment: &MixupAssignment,
    n: usize,
    descriptions: bool,
) -> Result<Vec<ChatMessage>, MixgenError> {
    if n == 0 {
        return Err(MixgenError::ZeroCount("utterances per call"));
    }
    let classes = assignment
        .subset
        .iter()
        .map(|name| {
            dataset
                .class(name)
                .ok_or_else(|| MixgenError::UnknownClass(name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if !dataset.contains(&assignment.majority_class) {
        return Err(MixgenError::UnknownClass(assignment.majority_class.clone()));
    }
    let n = n.to_string();
    let instruction = match (&assignment.minority_class, assignment.alpha) {
        (Some(minority), Some(alpha)) => {
            if !dataset.contains(minority) {
                return Err(MixgenError::UnknownClass(minority.clone()));
            }
            template::render(
                template::MIXUP_INSTRUCTION,
                &[
                    ("n", &n),
                    ("majority_percent", &alpha.majority_percent().to_string()),
                    ("majority", &assignment.majority_class),
                    ("minority_percent", &alpha.minority_percent().to_string()),
                    ("minority", minority),
                ],
            )
        }
        _ => template::render(
            template::SINGLE_INSTRUCTION,
            &[("n", &n), ("majority", &assignment.majority_class)],
        ),
    };
    let listing = template::class_listing(classes, descriptions);
    let user = template::render(
        template::GENERATION,
        &[("listing", &listing), ("instruction", instruction.trim_end())],
    );
    Ok(vec![
        ChatMessage::system(generation_system_prompt()),
        ChatMessage::user(user.trim_end()),
    ])
}

/// Number of utterances a rendered generation prompt asks for.
pub fn requested_count(prompt: &str) -> Option<usize> {
    let rest = &prompt[prompt.find("\nGenerate ")? + "\nGenerate ".len()..];
    rest.split_whitespace().next()?.parse().ok()
}

/// Majority class a rendered generation prompt asks for.
pub fn requested_majority(prompt: &str) -> Option<&str> {
    let line = &prompt[prompt.find("\nGenerate ")? + 1..];
    let line = line.lines().next()?;
    let rest = &line[line.find("to the class ")? + "to the class ".len()..];
    let name = rest.split(" and ").next()?;
    Some(name.strip_suffix('.').unwrap_or(name))
}
