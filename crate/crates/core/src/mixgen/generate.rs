use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{Backends, CompletionParams};
use crate::data::DatasetSpec;
use crate::exec::Execution;

use super::{
    build_generation_prompt_with, parse_generations, plan_assignment, AssignmentMode, MixgenError,
    MixupAssignment,
};

/// Salt separating generation streams from other uses of the run seed.
const GENERATION_STREAM_SALT: u64 = 0x6d69_7867_656e_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    /// Utterances wanted per class.
    pub n_per_class: usize,
    /// Utterances requested per call.
    pub n_per_call: usize,
    /// Classes shown per prompt.
    pub t: usize,
    pub mode: AssignmentMode,
    pub descriptions: bool,
    /// Call budget per class, as a multiple of the minimum call count.
    pub budget_factor: usize,
    pub params: CompletionParams,
}

impl GenerationSettings {
    pub fn new(n_per_class: usize, params: CompletionParams) -> Self {
        Self {
            n_per_class,
            n_per_call: 5,
            t: 4,
            mode: AssignmentMode::Mixup,
            descriptions: true,
            budget_factor: 3,
            params,
        }
    }

    /// `ceil(n_per_class / n_per_call)`.
    pub fn min_calls(&self) -> usize {
        self.n_per_class.div_ceil(self.n_per_call.max(1))
    }

    pub fn call_budget(&self) -> usize {
        self.budget_factor.max(1) * self.min_calls()
    }

    pub fn validate(&self) -> Result<(), MixgenError> {
        if self.n_per_class == 0 {
            return Err(MixgenError::ZeroCount("n_per_class"));
        }
        if self.n_per_call == 0 {
            return Err(MixgenError::ZeroCount("n_per_call"));
        }
        if self.mode != AssignmentMode::SingleClass && self.t < 2 {
            return Err(MixgenError::SubsetTooSmall { t: self.t });
        }
        Ok(())
    }
}

/// Result of one generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub class_index: usize,
    pub batch_index: usize,
    pub assignment: MixupAssignment,
    pub raw_completion_digest: String,
    pub utterances: Vec<String>,
}

/// One generated utterance with its mixup provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub text: String,
    pub assignment: MixupAssignment,
    /// Always the assignment's majority class.
    pub intended_label: String,
    pub batch_index: usize,
    pub raw_completion_digest: String,
}

/// Generation output for one focus class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGeneration {
    pub class: String,
    pub records: Vec<GenerationRecord>,
    pub calls: usize,
    /// Fewer than `n_per_class` utterances after the call budget ran out.
    pub shortfall: bool,
    /// Records whose text repeats an earlier record of the same class.
    pub duplicates: usize,
}

/// Random stream for one `(class, batch)` unit, independent of scheduling.
pub fn batch_rng(seed: u64, class_index: usize, batch_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ GENERATION_STREAM_SALT);
    rng.set_stream(((class_index as u64) << 32) | batch_index as u64);
    rng
}

/// Samples the assignment for a unit and renders its prompt.
pub fn batch_prompt(
    dataset: &DatasetSpec,
    settings: &GenerationSettings,
    seed: u64,
    class_index: usize,
    batch_index: usize,
) -> Result<(MixupAssignment, Vec<crate::backends::ChatMessage>), MixgenError> {
    let focus = &dataset
        .classes()
        .get(class_index)
        .ok_or_else(|| MixgenError::UnknownClass(format!("#{class_index}")))?
        .name;
    let mut rng = batch_rng(seed, class_index, batch_index);
    let assignment = plan_assignment(&dataset.class_names(), focus, settings.t, settings.mode, &mut rng)?;
    let prompt = build_generation_prompt_with(dataset, &assignment, settings.n_per_call, settings.descriptions)?;
    Ok((assignment, prompt))
}

/// Issues the generation call for one `(class, batch)` unit.
pub fn run_batch(
    dataset: &DatasetSpec,
    settings: &GenerationSettings,
    seed: u64,
    class_index: usize,
    batch_index: usize,
    backends: &Backends,
) -> Result<BatchOutcome, MixgenError> {
    let (assignment, prompt) = batch_prompt(dataset, settings, seed, class_index, batch_index)?;
    let completion = backends.complete(&prompt, &settings.params)?;
    let utterances = parse_generations(&completion.text, settings.n_per_call);
    if utterances.is_empty() {
        log::warn!(
            "class {} batch {batch_index}: completion had no parseable utterances",
            assignment.majority_class
        );
    }
    Ok(BatchOutcome {
        class_index,
        batch_index,
        assignment,
        raw_completion_digest: completion.call.response_digest,
        utterances,
    })
}

/// Flattens a class's batches (in batch order) into at most `n` records.
pub fn collect_records(class: &str, batches: &[BatchOutcome], n: usize) -> ClassGeneration {
    let mut records = Vec::with_capacity(n);
    'outer: for batch in batches {
        for text in &batch.utterances {
            if records.len() == n {
                break 'outer;
            }
            records.push(GenerationRecord {
                text: text.clone(),
                assignment: batch.assignment.clone(),
                intended_label: class.to_string(),
                batch_index: batch.batch_index,
                raw_completion_digest: batch.raw_completion_digest.clone(),
            });
        }
    }
    let mut seen = HashSet::new();
    let duplicates = records.iter().filter(|r| !seen.insert(r.text.as_str())).count();
    ClassGeneration {
        class: class.to_string(),
        shortfall: records.len() < n,
        records,
        calls: batches.len(),
        duplicates,
    }
}

/// Generates for every class in `class_indices`.
///
/// Work proceeds in rounds. Each round issues, for every class still short
/// of `n_per_class`, just enough new batches to close the gap if they all
/// yield fully, capped by the call budget. All units of a round run through
/// `exec`. `fetch(class_index, batch_index)` performs (or replays) one unit.
pub fn generate_classes<E, F>(
    dataset: &DatasetSpec,
    class_indices: &[usize],
    settings: &GenerationSettings,
    exec: Execution,
    fetch: F,
) -> Result<Vec<ClassGeneration>, E>
where
    E: Send + From<MixgenError>,
    F: Fn(usize, usize) -> Result<BatchOutcome, E> + Sync + Send,
{
    settings.validate()?;
    let n = settings.n_per_class;
    let per_call = settings.n_per_call;
    let budget = settings.call_budget();
    let mut batches: Vec<Vec<BatchOutcome>> = vec![Vec::new(); class_indices.len()];
    loop {
        let mut units = Vec::new();
        for (slot, &class_index) in class_indices.iter().enumerate() {
            let have: usize = batches[slot].iter().map(|b| b.utterances.len()).sum();
            let issued = batches[slot].len();
            if have >= n || issued >= budget {
                continue;
            }
            let wanted = (n - have).div_ceil(per_call).min(budget - issued);
            units.extend((issued..issued + wanted).map(|b| (slot, class_index, b)));
        }
        if units.is_empty() {
            break;
        }
        let outcomes = exec.try_map(&units, |&(_, class_index, batch)| fetch(class_index, batch))?;
        for (&(slot, _, _), outcome) in units.iter().zip(outcomes) {
            batches[slot].push(outcome);
        }
    }
    Ok(class_indices
        .iter()
        .zip(&batches)
        .map(|(&i, b)| collect_records(&dataset.classes()[i].name, b, n))
        .collect())
}

/// Generates `n_per_class` records for one focus class.
pub fn generate_for_class(
    dataset: &DatasetSpec,
    focus: &str,
    settings: &GenerationSettings,
    backends: &Backends,
    seed: u64,
) -> Result<ClassGeneration, MixgenError> {
    let class_index = dataset
        .class_index(focus)
        .ok_or_else(|| MixgenError::UnknownClass(focus.to_string()))?;
    let mut out = generate_classes(dataset, &[class_index], settings, Execution::Sequential, |c, b| {
        run_batch(dataset, settings, seed, c, b, backends)
    })?;
    Ok(out.remove(0))
}
