//! Step 2: relabeling every generation with an LLM classifier.
//!
//! For each utterance the closest `m` classes are retrieved by embedding
//! similarity, the model picks one of them, and its free-text answer is
//! resolved to a dataset class.

mod index;
mod prompt;
mod resolve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, CompletionParams};
use crate::data::{DataError, DatasetSpec};
use crate::exec::Execution;
use crate::mixgen::GenerationRecord;

pub use index::{build_index, rank_candidates, rank_with_vector, ClassEmbeddingIndex};
pub use prompt::{build_relabel_prompt, relabel_system_prompt};
pub use resolve::{clean_prediction, resolve_prediction, Resolution};

#[derive(Debug, Error)]
pub enum RelabelError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("candidate `{0}` listed twice")]
    DuplicateCandidate(String),
    #[error("prediction is empty")]
    EmptyPrediction,
    #[error("candidate count must be at least 1")]
    ZeroCandidates,
    #[error("index was built for a different dataset")]
    IndexMismatch,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelSettings {
    pub candidate_m: usize,
    /// Resolution similarity below which a record is flagged as a likely
    /// out-of-scope generation.
    pub oos_tau: f64,
    pub params: CompletionParams,
}

impl RelabelSettings {
    pub fn new(params: CompletionParams) -> Self {
        Self {
            candidate_m: 5,
            oos_tau: 0.35,
            params,
        }
    }
}

/// Outcome of classifying one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub candidates: Vec<String>,
    pub raw_prediction: String,
    pub resolution: Resolution,
}

/// Retrieve, prompt, resolve.
///
/// A blank answer cannot be embedded, so it resolves to the top-ranked
/// candidate with similarity 0 and the out-of-scope flag set.
pub fn classify_text(
    text: &str,
    dataset: &DatasetSpec,
    index: &ClassEmbeddingIndex,
    settings: &RelabelSettings,
    backends: &Backends,
) -> Result<Classification, RelabelError> {
    let candidates = rank_candidates(index, text, settings.candidate_m, backends)?;
    let prompt = build_relabel_prompt(dataset, &candidates, text)?;
    let raw_prediction = backends.complete(&prompt, &settings.params)?.text;
    let resolution = match resolve_prediction(&raw_prediction, index, backends, settings.oos_tau) {
        Err(RelabelError::EmptyPrediction) => Resolution {
            label: candidates[0].clone(),
            similarity: 0.0,
            exact: false,
            out_of_scope_suspect: true,
        },
        other => other?,
    };
    Ok(Classification {
        candidates,
        raw_prediction,
        resolution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelRecord {
    /// Position of the generation in the run's generation list.
    pub generation_index: usize,
    pub text: String,
    pub intended_label: String,
    pub candidates: Vec<String>,
    pub raw_prediction: String,
    pub resolved_label: String,
    pub resolution_similarity: f64,
    pub was_relabeled: bool,
    pub out_of_scope_suspect: bool,
}

pub fn relabel_one(
    generation_index: usize,
    record: &GenerationRecord,
    dataset: &DatasetSpec,
    index: &ClassEmbeddingIndex,
    settings: &RelabelSettings,
    backends: &Backends,
) -> Result<RelabelRecord, RelabelError> {
    let c = classify_text(&record.text, dataset, index, settings, backends)?;
    Ok(RelabelRecord {
        generation_index,
        text: record.text.clone(),
        intended_label: record.intended_label.clone(),
        was_relabeled: c.resolution.label != record.intended_label,
        candidates: c.candidates,
        raw_prediction: c.raw_prediction,
        resolved_label: c.resolution.label,
        resolution_similarity: c.resolution.similarity,
        out_of_scope_suspect: c.resolution.out_of_scope_suspect,
    })
}

/// Relabels the given `(generation_index, record)` pairs.
///
/// `sink` sees each finished record as soon as it completes (in completion
/// order, which under parallel execution is not input order); the returned
/// vector is in input order.
pub fn relabel_indexed<F>(
    items: &[(usize, &GenerationRecord)],
    dataset: &DatasetSpec,
    index: &ClassEmbeddingIndex,
    settings: &RelabelSettings,
    backends: &Backends,
    exec: Execution,
    sink: F,
) -> Result<Vec<RelabelRecord>, RelabelError>
where
    F: Fn(&RelabelRecord) -> Result<(), RelabelError> + Sync + Send,
{
    if !index.covers(dataset) {
        return Err(RelabelError::IndexMismatch);
    }
    exec.try_map(items, |&(i, record)| {
        let out = relabel_one(i, record, dataset, index, settings, backends)?;
        sink(&out)?;
        Ok(out)
    })
}

/// One relabel record per generation, in order.
pub fn relabel_all(
    records: &[GenerationRecord],
    dataset: &DatasetSpec,
    index: &ClassEmbeddingIndex,
    settings: &RelabelSettings,
    backends: &Backends,
    exec: Execution,
) -> Result<Vec<RelabelRecord>, RelabelError> {
    let items: Vec<(usize, &GenerationRecord)> = records.iter().enumerate().collect();
    relabel_indexed(&items, dataset, index, settings, backends, exec, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{FnChat, HashedTokenEmbedder};
    use crate::backends::{CallKind, ChatMessage};
    use crate::data::ClassSpec;
    use crate::mixgen::{AssignmentMode, MixupAssignment};
    use std::sync::Arc;

    pub(crate) fn bank() -> DatasetSpec {
        DatasetSpec::new(
            "bank",
            vec![
                ClassSpec::new(
                    "age_limit",
                    "questions about the minimum age required to open an account or use a service",
                    ["How old do I need to be to open an account?", "Is there an age requirement for a card?"],
                ),
                ClassSpec::new(
                    "atm_support",
                    "questions about using ATMs, finding ATMs or problems at an ATM",
                    ["Where is the nearest ATM?", "The ATM did not give me my cash."],
                ),
                ClassSpec::new(
                    "card_arrival",
                    "questions about when a new card will arrive",
                    ["When will my card arrive?", "My card still has not come in the mail."],
                ),
            ],
        )
        .unwrap()
    }

    fn generation(text: &str, intended: &str) -> GenerationRecord {
        GenerationRecord {
            text: text.into(),
            assignment: MixupAssignment {
                majority_class: intended.into(),
                minority_class: None,
                alpha: None,
                subset: vec![intended.into()],
            },
            intended_label: intended.into(),
            batch_index: 0,
            raw_completion_digest: String::new(),
        }
    }

    fn backends(answer: &'static str) -> Backends {
        Backends::default()
            .with_chat(Arc::new(FnChat::new(move |_: &[ChatMessage]| Ok(answer.to_string()))))
            .with_embed(Arc::new(HashedTokenEmbedder::default()))
    }

    fn settings() -> RelabelSettings {
        RelabelSettings::new(CompletionParams::new("m", 0.0))
    }

    #[test]
    fn agreeing_answer_keeps_the_label() {
        let ds = bank();
        let b = backends("card_arrival");
        let index = build_index(&ds, &b).unwrap();
        let records = [generation("When does the new card show up?", "card_arrival")];
        let out = relabel_all(&records, &ds, &index, &settings(), &b, Execution::Sequential).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].was_relabeled);
        assert_eq!(out[0].resolution_similarity, 1.0);
    }

    #[test]
    fn leaked_generation_is_fixed() {
        let ds = bank();
        let b = backends("atm_support");
        let index = build_index(&ds, &b).unwrap();
        let records = [generation("Do I need to be over a certain age to use an ATM?", "age_limit")];
        let out = relabel_all(&records, &ds, &index, &settings(), &b, Execution::Sequential).unwrap();
        assert!(out[0].was_relabeled);
        assert_eq!(out[0].resolved_label, "atm_support");
        assert_eq!(out[0].candidates.len(), 3);
    }

    #[test]
    fn one_rank_one_completion_per_record() {
        let ds = bank();
        let b = backends("age_limit");
        let index = build_index(&ds, &b).unwrap();
        let before = b.ledger().count(CallKind::Embed);
        assert_eq!(before, 6);
        let records: Vec<_> = (0..9).map(|i| generation(&format!("utterance number {i} here"), "age_limit")).collect();
        let out = relabel_all(&records, &ds, &index, &settings(), &b, Execution::Parallel).unwrap();
        assert_eq!(out.iter().map(|r| r.generation_index).collect::<Vec<_>>(), (0..9).collect::<Vec<_>>());
        assert_eq!(b.ledger().count(CallKind::Chat), 9);
        assert_eq!(b.ledger().count(CallKind::Embed), before + 9);
    }

    #[test]
    fn blank_answer_falls_back_to_top_candidate() {
        let ds = bank();
        let b = backends("   ");
        let index = build_index(&ds, &b).unwrap();
        let c = classify_text("When will my card arrive?", &ds, &index, &settings(), &b).unwrap();
        assert_eq!(c.resolution.label, "card_arrival");
        assert!(c.resolution.out_of_scope_suspect);
    }

    #[test]
    fn index_for_another_dataset_is_rejected() {
        let ds = bank();
        let b = backends("age_limit");
        let index = build_index(&ds, &b).unwrap();
        let other = DatasetSpec::new("x", vec![ClassSpec::new("a", "d", ["e"]), ClassSpec::new("b", "d", ["e"])]).unwrap();
        let err = relabel_all(&[generation("some text here", "a")], &other, &index, &settings(), &b, Execution::Sequential);
        assert!(matches!(err, Err(RelabelError::IndexMismatch)));
    }

    #[test]
    fn relabeled_flag_matches_labels() {
        let ds = bank();
        let b = backends("Age_Limit.");
        let index = build_index(&ds, &b).unwrap();
        let records = [generation("cash machine swallowed card", "atm_support")];
        let r = &relabel_all(&records, &ds, &index, &settings(), &b, Execution::Sequential).unwrap()[0];
        assert!(ds.contains(&r.resolved_label));
        assert_eq!(r.was_relabeled, r.resolved_label != r.intended_label);
        let _ = AssignmentMode::Mixup;
    }
}
