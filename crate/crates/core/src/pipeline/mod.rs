//! End-to-end augmentation runs: generation, relabeling, assembly, and the
//! checkpoint/manifest plumbing that makes runs resumable.

mod config;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends, ChatMessage, LedgerSummary};
use crate::data::{emit_dataset, DataError, DatasetSpec, EmitFormat, LabeledExample, Provenance, RelabelStats};
use crate::exec::Execution;
use crate::jsonl;
use crate::mixgen::{self, generate_classes, run_batch, ClassGeneration, GenerationRecord, MixgenError};
use crate::relabel::{build_index, relabel_indexed, RelabelError, RelabelRecord};

pub use config::{BackendKind, BackendSection, DatasetSection, GenerationSection, PipelineConfig, RelabelSection, RunSection};
pub use store::{RunStore, AUGMENTED_FILE, GENERATIONS_FILE, MANIFEST_FILE, RELABELS_FILE};

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration changed since the run started (manifest {expected}, current {found})")]
    ConfigDrift { expected: String, found: String },
    #[error("{0} already holds a run; resume it or choose another output directory")]
    OutputExists(PathBuf),
    #[error("relabeling needs an embedding backend")]
    NoEmbedder,
    #[error("checkpoint disagrees with the generations: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mixgen(#[from] MixgenError),
    #[error(transparent)]
    Relabel(#[from] RelabelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Started,
    Generated,
    Relabeled,
    Completed,
    Interrupted,
}

/// One append-only entry in the manifest's stage log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: Stage,
    pub session: u32,
    /// Units (generation batches or relabel records) done in this session.
    pub units_completed: usize,
    /// Units taken from checkpoints instead of being re-issued.
    pub units_reused: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassYield {
    pub class: String,
    pub generated: usize,
    pub calls: usize,
    pub shortfall: bool,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub k: usize,
    pub class_count: usize,
    /// Number of sessions (first run plus resumes).
    pub sessions: u32,
    pub stages: Vec<StageEntry>,
    pub classes: Vec<ClassYield>,
    pub shortfall_classes: Vec<String>,
    pub total_generated: usize,
    pub duplicate_generations: usize,
    pub out_of_scope_suspects: usize,
    /// Generation indices of the out-of-scope suspects.
    pub out_of_scope_indices: Vec<usize>,
    pub relabel_stats: Option<RelabelStats>,
    /// Backend usage summed over all sessions.
    pub ledger: LedgerSummary,
}

impl RunManifest {
    fn new(dataset: &DatasetSpec, config: &PipelineConfig, config_hash: String) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            config: config.clone(),
            config_hash,
            seed: config.run.seed,
            dataset: dataset.name().to_string(),
            k: dataset.k(),
            class_count: dataset.classes().len(),
            sessions: 1,
            stages: Vec::new(),
            classes: Vec::new(),
            shortfall_classes: Vec::new(),
            total_generated: 0,
            duplicate_generations: 0,
            out_of_scope_suspects: 0,
            out_of_scope_indices: Vec::new(),
            relabel_stats: None,
            ledger: LedgerSummary::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| {
            PipelineError::Data(DataError::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })
        })
    }

    pub fn has_shortfall(&self) -> bool {
        !self.shortfall_classes.is_empty()
    }

    fn stage(&mut self, stage: Stage, units_completed: usize, units_reused: usize) {
        self.stages.push(StageEntry {
            stage,
            session: self.sessions,
            units_completed,
            units_reused,
            message: None,
        });
    }
}

/// Seed examples plus the labeled generations, with the run manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub examples: Vec<LabeledExample>,
    pub manifest: RunManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub augmented: AugmentedDataset,
    pub generations: Vec<GenerationRecord>,
    /// Empty when relabeling is disabled.
    pub relabels: Vec<RelabelRecord>,
}

/// Seed examples followed by every generation, labeled by its resolved
/// label or, without relabel records, by its intended class.
pub fn assemble(
    dataset: &DatasetSpec,
    generations: &[GenerationRecord],
    relabels: Option<&[RelabelRecord]>,
) -> Vec<LabeledExample> {
    let mut examples = dataset.seed_examples();
    for (i, g) in generations.iter().enumerate() {
        let relabel = relabels.and_then(|r| r.get(i));
        let label = relabel.map_or(&g.intended_label, |r| &r.resolved_label);
        examples.push(LabeledExample::generated(
            g.text.clone(),
            label.clone(),
            Provenance {
                majority_class: g.assignment.majority_class.clone(),
                minority_class: g.assignment.minority_class.clone(),
                alpha: g.assignment.alpha,
                resolved_from: relabel.map(|r| r.raw_prediction.clone()),
            },
        ));
    }
    examples
}

/// A run bound to its output directory, ready to execute.
pub struct AugmentationRun<'a> {
    dataset: &'a DatasetSpec,
    config: &'a PipelineConfig,
    backends: &'a Backends,
    store: RunStore,
    manifest: RunManifest,
    exec: Execution,
    resumed: bool,
}

impl<'a> AugmentationRun<'a> {
    /// Starts a fresh run in `config.run.output_dir`, which must not hold a
    /// manifest already unless `overwrite` is set.
    pub fn start(
        dataset: &'a DatasetSpec,
        config: &'a PipelineConfig,
        backends: &'a Backends,
        overwrite: bool,
    ) -> Result<Self, PipelineError> {
        Self::check_inputs(dataset, config, backends)?;
        let store = RunStore::new(&config.run.output_dir);
        if store.manifest_path().exists() && !overwrite {
            return Err(PipelineError::OutputExists(store.dir().to_path_buf()));
        }
        store.prepare_fresh()?;
        let mut manifest = RunManifest::new(dataset, config, config.fingerprint(dataset));
        manifest.stage(Stage::Started, 0, 0);
        store.write_json(MANIFEST_FILE, &manifest)?;
        Ok(Self {
            dataset,
            config,
            backends,
            store,
            manifest,
            exec: Execution::default(),
            resumed: false,
        })
    }

    /// Continues the run whose manifest is at `manifest_path`. The current
    /// config and dataset must hash to the manifest's fingerprint.
    pub fn resume(
        manifest_path: &Path,
        dataset: &'a DatasetSpec,
        config: &'a PipelineConfig,
        backends: &'a Backends,
    ) -> Result<Self, PipelineError> {
        Self::check_inputs(dataset, config, backends)?;
        let mut manifest = RunManifest::load(manifest_path)?;
        let found = config.fingerprint(dataset);
        if manifest.config_hash != found {
            return Err(PipelineError::ConfigDrift {
                expected: manifest.config_hash,
                found,
            });
        }
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        manifest.sessions += 1;
        manifest.config = config.clone();
        manifest.stage(Stage::Started, 0, 0);
        Ok(Self {
            dataset,
            config,
            backends,
            store: RunStore::new(dir),
            manifest,
            exec: Execution::default(),
            resumed: true,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn output_dir(&self) -> &Path {
        self.store.dir()
    }

    fn check_inputs(dataset: &DatasetSpec, config: &PipelineConfig, backends: &Backends) -> Result<(), PipelineError> {
        config.validate()?;
        config.generation_settings().validate()?;
        if config.relabel.enabled && !backends.has_embedder() {
            return Err(PipelineError::NoEmbedder);
        }
        if dataset.classes().len() < 2 {
            return Err(PipelineError::Config("a dataset needs at least two classes".into()));
        }
        Ok(())
    }

    /// Runs (or finishes) both steps and writes every output file. On
    /// failure, completed units stay checkpointed and the manifest records
    /// the interruption.
    pub fn execute(mut self) -> Result<RunOutput, PipelineError> {
        let ledger_start = self.backends.ledger().len();
        let threads = self.backends.max_in_flight();
        let exec = self.exec;
        let result = exec.install(threads, || self.execute_inner());
        let session = self.backends.ledger().summary_since(ledger_start);
        self.manifest.ledger = self.manifest.ledger.merged(&session);
        match result {
            Ok((generations, relabels)) => {
                self.manifest.stage(Stage::Completed, 0, 0);
                self.store.write_json(MANIFEST_FILE, &self.manifest)?;
                let examples = assemble(self.dataset, &generations, self.config.relabel.enabled.then_some(&relabels[..]));
                Ok(RunOutput {
                    augmented: AugmentedDataset {
                        examples,
                        manifest: self.manifest,
                    },
                    generations,
                    relabels,
                })
            }
            Err(err) => {
                self.manifest.stages.push(StageEntry {
                    stage: Stage::Interrupted,
                    session: self.manifest.sessions,
                    units_completed: 0,
                    units_reused: 0,
                    message: Some(err.to_string()),
                });
                if let Err(write_err) = self.store.write_json(MANIFEST_FILE, &self.manifest) {
                    log::error!("could not record the interruption: {write_err}");
                }
                Err(err)
            }
        }
    }

    fn execute_inner(&mut self) -> Result<(Vec<GenerationRecord>, Vec<RelabelRecord>), PipelineError> {
        let generations = self.generate()?;
        let relabels = if self.config.relabel.enabled {
            self.relabel(&generations)?
        } else {
            Vec::new()
        };
        let examples = assemble(self.dataset, &generations, self.config.relabel.enabled.then_some(&relabels[..]));
        jsonl::write(&self.store.path(GENERATIONS_FILE), &generations)?;
        jsonl::write(&self.store.path(RELABELS_FILE), &relabels)?;
        emit_dataset(&examples, &self.store.path(AUGMENTED_FILE), EmitFormat::Jsonl)?;
        Ok((generations, relabels))
    }

    fn generate(&mut self) -> Result<Vec<GenerationRecord>, PipelineError> {
        let settings = self.config.generation_settings();
        let cached = if self.resumed { self.store.load_batches()? } else { BTreeMap::new() };
        let seed = self.config.run.seed;
        let (dataset, backends, store) = (self.dataset, self.backends, &self.store);
        let issued = std::sync::atomic::AtomicUsize::new(0);
        let classes: Vec<usize> = (0..dataset.classes().len()).collect();
        let per_class: Vec<ClassGeneration> = generate_classes(dataset, &classes, &settings, self.exec, |c, b| {
            if let Some(batch) = cached.get(&(c, b)) {
                return Ok::<_, PipelineError>(batch.clone());
            }
            let batch = run_batch(dataset, &settings, seed, c, b, backends)?;
            store.append_batch(&batch)?;
            issued.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            Ok(batch)
        })?;
        let issued = issued.into_inner();
        let total_batches: usize = per_class.iter().map(|c| c.calls).sum();

        let m = &mut self.manifest;
        m.classes = per_class
            .iter()
            .map(|c| ClassYield {
                class: c.class.clone(),
                generated: c.records.len(),
                calls: c.calls,
                shortfall: c.shortfall,
                duplicates: c.duplicates,
            })
            .collect();
        m.shortfall_classes = per_class.iter().filter(|c| c.shortfall).map(|c| c.class.clone()).collect();
        m.total_generated = per_class.iter().map(|c| c.records.len()).sum();
        m.duplicate_generations = per_class.iter().map(|c| c.duplicates).sum();
        m.stage(Stage::Generated, issued, total_batches - issued);
        for class in &m.shortfall_classes {
            log::warn!("class {class}: fewer than {} utterances after the call budget", settings.n_per_class);
        }
        self.store.write_json(MANIFEST_FILE, &self.manifest)?;
        Ok(per_class.into_iter().flat_map(|c| c.records).collect())
    }

    fn relabel(&mut self, generations: &[GenerationRecord]) -> Result<Vec<RelabelRecord>, PipelineError> {
        let settings = self.config.relabel_settings();
        let mut done = if self.resumed { self.store.load_relabels()? } else { BTreeMap::new() };
        for (i, r) in &done {
            match generations.get(*i) {
                Some(g) if g.text == r.text && g.intended_label == r.intended_label => {}
                _ => return Err(PipelineError::Inconsistent(format!("relabel record {i}"))),
            }
        }
        let reused = done.len();
        let pending: Vec<(usize, &GenerationRecord)> = generations
            .iter()
            .enumerate()
            .filter(|(i, _)| !done.contains_key(i))
            .collect();
        if !pending.is_empty() {
            let index = build_index(self.dataset, self.backends)?;
            let store = &self.store;
            let fresh = relabel_indexed(&pending, self.dataset, &index, &settings, self.backends, self.exec, |r| {
                store.append_relabel(r).map_err(RelabelError::from)
            })?;
            done.extend(fresh.into_iter().map(|r| (r.generation_index, r)));
        }
        let relabels: Vec<RelabelRecord> = done.into_values().collect();

        let m = &mut self.manifest;
        m.out_of_scope_indices = relabels.iter().filter(|r| r.out_of_scope_suspect).map(|r| r.generation_index).collect();
        m.out_of_scope_suspects = m.out_of_scope_indices.len();
        m.relabel_stats = Some(RelabelStats::from_relabels(&relabels));
        m.stage(Stage::Relabeled, pending.len(), reused);
        self.store.write_json(MANIFEST_FILE, &self.manifest)?;
        Ok(relabels)
    }
}

/// Starts a fresh run in `config.run.output_dir` and executes it.
pub fn run_augmentation(
    dataset: &DatasetSpec,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<RunOutput, PipelineError> {
    AugmentationRun::start(dataset, config, backends, false)?.execute()
}

/// Continues an interrupted run.
pub fn resume(
    manifest_path: &Path,
    dataset: &DatasetSpec,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<RunOutput, PipelineError> {
    AugmentationRun::resume(manifest_path, dataset, config, backends)?.execute()
}

/// Re-runs relabeling over an existing generations list and writes
/// `relabels.jsonl` and `augmented.jsonl` to `output_dir`.
pub fn relabel_generations(
    dataset: &DatasetSpec,
    config: &PipelineConfig,
    generations: &[GenerationRecord],
    backends: &Backends,
    output_dir: &Path,
    exec: Execution,
) -> Result<(Vec<RelabelRecord>, Vec<LabeledExample>), PipelineError> {
    if !backends.has_embedder() {
        return Err(PipelineError::NoEmbedder);
    }
    for (i, g) in generations.iter().enumerate() {
        if !dataset.contains(&g.intended_label) {
            return Err(PipelineError::Inconsistent(format!(
                "generation {i} names unknown class `{}`",
                g.intended_label
            )));
        }
    }
    let settings = config.relabel_settings();
    let items: Vec<(usize, &GenerationRecord)> = generations.iter().enumerate().collect();
    let relabels = exec.install(backends.max_in_flight(), || {
        let index = build_index(dataset, backends)?;
        relabel_indexed(&items, dataset, &index, &settings, backends, exec, |_| Ok(()))
    })?;
    let examples = assemble(dataset, generations, Some(&relabels));
    let store = RunStore::new(output_dir);
    std::fs::create_dir_all(output_dir).map_err(|source| DataError::Io {
        path: output_dir.to_path_buf(),
        source,
    })?;
    jsonl::write(&store.path(RELABELS_FILE), &relabels)?;
    emit_dataset(&examples, &store.path(AUGMENTED_FILE), EmitFormat::Jsonl)?;
    Ok((relabels, examples))
}

/// Expected backend traffic of a run, computed without issuing requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallPlan {
    pub classes: usize,
    pub generation_calls_min: usize,
    pub generation_call_budget: usize,
    pub relabel_completions: usize,
    pub index_embeddings: usize,
    /// One per relabeled text plus, at most, one per class name.
    pub relabel_embeddings_max: usize,
}

impl fmt::Display for CallPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "classes:                  {}", self.classes)?;
        writeln!(
            f,
            "generation calls:         {} (budget {})",
            self.generation_calls_min, self.generation_call_budget
        )?;
        writeln!(f, "relabel completions:      up to {}", self.relabel_completions)?;
        write!(
            f,
            "embedding calls:          {} for the index, up to {} for relabeling",
            self.index_embeddings, self.relabel_embeddings_max
        )
    }
}

/// Call plan and the first generation prompt of a run.
pub fn plan(dataset: &DatasetSpec, config: &PipelineConfig) -> Result<(CallPlan, Vec<ChatMessage>), PipelineError> {
    config.validate()?;
    let settings = config.generation_settings();
    settings.validate()?;
    let classes = dataset.classes().len();
    let generated = classes * settings.n_per_class;
    let relabel = config.relabel.enabled;
    let plan = CallPlan {
        classes,
        generation_calls_min: classes * settings.min_calls(),
        generation_call_budget: classes * settings.call_budget(),
        relabel_completions: if relabel { generated } else { 0 },
        index_embeddings: if relabel { classes * dataset.k().max(1) } else { 0 },
        relabel_embeddings_max: if relabel { generated * 2 + classes } else { 0 },
    };
    let (_, prompt) = mixgen::batch_prompt(dataset, &settings, config.run.seed, 0, 0)?;
    Ok((plan, prompt))
}
