use std::collections::HashSet;

use crate::backends::ChatMessage;
use crate::data::DatasetSpec;
use crate::template;

use super::RelabelError;

pub fn relabel_system_prompt() -> &'static str {
    template::RELABEL_SYSTEM.trim_end()
}

/// Classification prompt over `candidates` (in the given order): each
/// candidate's name, description and seed examples, then the sentence and
/// the answer instruction.
pub fn build_relabel_prompt(
    dataset: &DatasetSpec,
    candidates: &[String],
    sentence: &str,
) -> Result<Vec<ChatMessage>, RelabelError> {
    if candidates.is_empty() {
        return Err(RelabelError::NoCandidates);
    }
    let mut seen = HashSet::new();
    let classes = candidates
        .iter()
        .map(|name| {
            if !seen.insert(name.as_str()) {
                return Err(RelabelError::DuplicateCandidate(name.clone()));
            }
            dataset
                .class(name)
                .ok_or_else(|| RelabelError::UnknownClass(name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let listing = template::class_listing(classes, true);
    let user = template::render(
        template::RELABEL,
        &[("listing", &listing), ("sentence", sentence.trim())],
    );
    Ok(vec![
        ChatMessage::system(relabel_system_prompt()),
        ChatMessage::user(user.trim_end()),
    ])
}
