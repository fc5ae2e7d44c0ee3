//! Direct LLM classification of arbitrary texts with the relabeling
//! machinery: retrieve candidates, prompt, resolve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Backends;
use crate::data::{DatasetSpec, LabeledExample};
use crate::exec::Execution;
use crate::relabel::{classify_text, ClassEmbeddingIndex, RelabelError, RelabelSettings};

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("test example {index} has unknown label `{label}`")]
    UnknownLabel { index: usize, label: String },
    #[error(transparent)]
    Relabel(#[from] RelabelError),
}

pub fn nn_classify(
    text: &str,
    dataset: &DatasetSpec,
    index: &ClassEmbeddingIndex,
    settings: &RelabelSettings,
    backends: &Backends,
) -> Result<String, ClassifyError> {
    Ok(classify_text(text, dataset, index, settings, backends)?.resolution.label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub text: String,
    pub gold: String,
    pub predicted: String,
    pub raw_prediction: String,
    pub out_of_scope_suspect: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// gold -> predicted -> count
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate_accuracy(
    test: &[LabeledExample],
    dataset: &DatasetSpec,
    index: &ClassEmbeddingIndex,
    settings: &RelabelSettings,
    backends: &Backends,
    exec: Execution,
) -> Result<Evaluation, ClassifyError> {
    if test.is_empty() {
        return Err(ClassifyError::EmptyTestSet);
    }
    if let Some((i, e)) = test.iter().enumerate().find(|(_, e)| !dataset.contains(&e.label)) {
        return Err(ClassifyError::UnknownLabel {
            index: i,
            label: e.label.clone(),
        });
    }
    let predictions = exec.try_map(test, |example| {
        let c = classify_text(&example.text, dataset, index, settings, backends)?;
        Ok::<_, ClassifyError>(Prediction {
            text: example.text.clone(),
            gold: example.label.clone(),
            predicted: c.resolution.label,
            raw_prediction: c.raw_prediction,
            out_of_scope_suspect: c.resolution.out_of_scope_suspect,
        })
    })?;
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for p in &predictions {
        *confusion.entry(p.gold.clone()).or_default().entry(p.predicted.clone()).or_default() += 1;
    }
    let correct = predictions.iter().filter(|p| p.gold == p.predicted).count();
    Ok(Evaluation {
        accuracy: correct as f64 / predictions.len() as f64,
        correct,
        total: predictions.len(),
        confusion,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{FnChat, HashedTokenEmbedder};
    use crate::backends::{ChatMessage, CompletionParams};
    use crate::data::ClassSpec;
    use crate::relabel::build_index;
    use std::sync::Arc;

    fn dataset() -> DatasetSpec {
        DatasetSpec::new(
            "d",
            vec![
                ClassSpec::new("age_limit", "age rules", ["how old must I be"]),
                ClassSpec::new("atm_support", "cash machines", ["where is an atm"]),
            ],
        )
        .unwrap()
    }

    /// Answers with whatever class name the sentence ends with after `#`.
    fn hinted() -> Backends {
        Backends::default()
            .with_chat(Arc::new(FnChat::new(|m: &[ChatMessage]| {
                let user = &m[1].content;
                let line = user.lines().find(|l| l.starts_with("Sentence: ")).unwrap();
                Ok(line.rsplit('#').next().unwrap().to_string())
            })))
            .with_embed(Arc::new(HashedTokenEmbedder::default()))
    }

    fn settings() -> RelabelSettings {
        RelabelSettings::new(CompletionParams::new("m", 0.0))
    }

    fn examples(correct: usize, total: usize) -> Vec<LabeledExample> {
        (0..total)
            .map(|i| {
                let answer = if i < correct { "atm_support" } else { "age_limit" };
                LabeledExample::seed(format!("sentence {i} #{answer}"), "atm_support")
            })
            .collect()
    }

    #[test]
    fn classifies_the_figure_sentence() {
        let ds = dataset();
        let b = hinted();
        let index = build_index(&ds, &b).unwrap();
        let label = nn_classify("Do I need to be over a certain age to use an ATM? #atm_support", &ds, &index, &settings(), &b).unwrap();
        assert_eq!(label, "atm_support");
    }

    #[test]
    fn unknown_answer_goes_to_nearest_name() {
        let ds = dataset();
        let b = hinted();
        let index = build_index(&ds, &b).unwrap();
        // "age" shares a token with age_limit only.
        assert_eq!(nn_classify("text #the age", &ds, &index, &settings(), &b).unwrap(), "age_limit");
    }

    #[test]
    fn accuracy_counts() {
        let ds = dataset();
        let b = hinted();
        let index = build_index(&ds, &b).unwrap();
        let e = evaluate_accuracy(&examples(7, 10), &ds, &index, &settings(), &b, Execution::Parallel).unwrap();
        assert_eq!(e.accuracy, 0.7);
        assert_eq!(e.confusion["atm_support"]["age_limit"], 3);
        let all = evaluate_accuracy(&examples(4, 4), &ds, &index, &settings(), &b, Execution::Sequential).unwrap();
        assert_eq!(all.accuracy, 1.0);
        assert!(matches!(
            evaluate_accuracy(&[], &ds, &index, &settings(), &b, Execution::Sequential),
            Err(ClassifyError::EmptyTestSet)
        ));
    }

    #[test]
    fn accuracy_ignores_order() {
        let ds = dataset();
        let b = hinted();
        let index = build_index(&ds, &b).unwrap();
        let mut ex = examples(3, 8);
        let a = evaluate_accuracy(&ex, &ds, &index, &settings(), &b, Execution::Sequential).unwrap();
        ex.reverse();
        let r = evaluate_accuracy(&ex, &ds, &index, &settings(), &b, Execution::Sequential).unwrap();
        assert_eq!((a.accuracy, a.confusion), (r.accuracy, r.confusion));
    }
}
