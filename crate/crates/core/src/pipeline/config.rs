use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::mock::{HashedTokenEmbedder, SyntheticChat, TranscriptChat};
use crate::backends::{digest_str, Backends, CompletionParams, OpenAiChat, OpenAiEmbed, RetryPolicy};
use crate::data::{load_class_pool, reduce_to_kshot, DatasetSpec};
use crate::mixgen::{AssignmentMode, GenerationSettings};
use crate::relabel::RelabelSettings;

use super::PipelineError;

/// Run configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetSection,
    pub generation: GenerationSection,
    #[serde(default)]
    pub relabel: RelabelSection,
    #[serde(default)]
    pub backends: BackendSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Class metadata file, relative to the config file.
    pub classes: PathBuf,
    /// Defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
    /// Reduce every class to `k` seed examples (sampled with the run seed).
    #[serde(default)]
    pub k: Option<usize>,
    /// Drop all seed examples; prompts and the index use descriptions and
    /// class names only.
    #[serde(default)]
    pub zero_shot: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub n_per_class: usize,
    #[serde(default = "defaults::n_per_call")]
    pub n_per_call: usize,
    #[serde(default = "defaults::t")]
    pub t: usize,
    #[serde(default = "defaults::yes")]
    pub mixup_enabled: bool,
    /// Put only the focus class in each prompt.
    #[serde(default)]
    pub single_class: bool,
    #[serde(default = "defaults::yes")]
    pub descriptions: bool,
    #[serde(default = "defaults::budget_factor")]
    pub budget_factor: usize,
    #[serde(default = "defaults::max_tokens")]
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelabelSection {
    #[serde(default = "defaults::yes")]
    pub enabled: bool,
    #[serde(default = "defaults::candidate_m")]
    pub candidate_m: usize,
    #[serde(default = "defaults::oos_tau")]
    pub oos_tau: f64,
}

impl Default for RelabelSection {
    fn default() -> Self {
        Self {
            enabled: true,
            candidate_m: defaults::candidate_m(),
            oos_tau: defaults::oos_tau(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Any OpenAI-compatible HTTP endpoint.
    Openai,
    /// Offline: a transcript file if given, else the synthetic chat model,
    /// plus the hashed-token embedder.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default = "defaults::kind")]
    pub kind: BackendKind,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default = "defaults::base_url")]
    pub base_url: String,
    #[serde(default = "defaults::chat_model")]
    pub chat_model: String,
    #[serde(default = "defaults::embed_model")]
    pub embed_model: String,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub relabel_temperature: f64,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "defaults::retries")]
    pub retries: u32,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: defaults::kind(),
            transcript: None,
            base_url: defaults::base_url(),
            chat_model: defaults::chat_model(),
            embed_model: defaults::embed_model(),
            temperature: defaults::temperature(),
            relabel_temperature: 0.0,
            max_in_flight: defaults::max_in_flight(),
            retries: defaults::retries(),
            timeout_secs: defaults::timeout_secs(),
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: defaults::output_dir(),
        }
    }
}

mod defaults {
    use super::BackendKind;
    use std::path::PathBuf;

    pub fn yes() -> bool {
        true
    }
    pub fn n_per_call() -> usize {
        5
    }
    pub fn t() -> usize {
        4
    }
    pub fn budget_factor() -> usize {
        3
    }
    pub fn max_tokens() -> u32 {
        512
    }
    pub fn candidate_m() -> usize {
        5
    }
    pub fn oos_tau() -> f64 {
        0.35
    }
    pub fn kind() -> BackendKind {
        BackendKind::Openai
    }
    pub fn base_url() -> String {
        "https://api.openai.com/v1".into()
    }
    pub fn chat_model() -> String {
        "gpt-3.5-turbo".into()
    }
    pub fn embed_model() -> String {
        "text-embedding-3-small".into()
    }
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn max_in_flight() -> usize {
        4
    }
    pub fn retries() -> u32 {
        3
    }
    pub fn timeout_secs() -> f64 {
        60.0
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs/default")
    }
}

impl PipelineConfig {
    /// Parses TOML and resolves relative paths against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut config: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        resolve(&mut config.dataset.classes);
        resolve(&mut config.run.output_dir);
        if let Some(t) = config.backends.transcript.as_mut() {
            resolve(t);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let g = &self.generation;
        if g.n_per_class == 0 {
            return bad("generation.n_per_class must be at least 1".into());
        }
        if g.n_per_call == 0 {
            return bad("generation.n_per_call must be at least 1".into());
        }
        if !g.single_class && g.t < 2 {
            return bad(format!("generation.t must be at least 2, got {}", g.t));
        }
        if g.budget_factor == 0 {
            return bad("generation.budget_factor must be at least 1".into());
        }
        if self.relabel.candidate_m == 0 {
            return bad("relabel.candidate_m must be at least 1".into());
        }
        if !(-1.0..=1.0).contains(&self.relabel.oos_tau) {
            return bad("relabel.oos_tau must lie in [-1, 1]".into());
        }
        if self.dataset.zero_shot && self.dataset.k.is_some_and(|k| k > 0) {
            return bad("dataset.zero_shot requires k = 0".into());
        }
        if self.backends.max_in_flight == 0 {
            return bad("backends.max_in_flight must be at least 1".into());
        }
        if !(self.backends.timeout_secs > 0.0 && self.backends.timeout_secs.is_finite()) {
            return bad("backends.timeout_secs must be positive".into());
        }
        for (name, t) in [("temperature", self.backends.temperature), ("relabel_temperature", self.backends.relabel_temperature)] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("backends.{name} must lie in [0, 2]"));
            }
        }
        Ok(())
    }

    pub fn assignment_mode(&self) -> AssignmentMode {
        if self.generation.single_class {
            AssignmentMode::SingleClass
        } else if self.generation.mixup_enabled {
            AssignmentMode::Mixup
        } else {
            AssignmentMode::MultiClass
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.backends.timeout_secs)
    }

    pub fn generation_settings(&self) -> GenerationSettings {
        let g = &self.generation;
        let mut params = CompletionParams::new(&self.backends.chat_model, self.backends.temperature);
        params.max_tokens = g.max_tokens;
        params.request_timeout = self.timeout();
        GenerationSettings {
            n_per_class: g.n_per_class,
            n_per_call: g.n_per_call,
            t: g.t,
            mode: self.assignment_mode(),
            descriptions: g.descriptions,
            budget_factor: g.budget_factor,
            params,
        }
    }

    pub fn relabel_settings(&self) -> RelabelSettings {
        let mut params = CompletionParams::new(&self.backends.chat_model, self.backends.relabel_temperature);
        params.max_tokens = 32;
        params.request_timeout = self.timeout();
        RelabelSettings {
            candidate_m: self.relabel.candidate_m,
            oos_tau: self.relabel.oos_tau,
            params,
        }
    }

    /// Loads the class file and applies `k` / `zero_shot`.
    pub fn load_dataset(&self) -> Result<DatasetSpec, PipelineError> {
        let path = &self.dataset.classes;
        let name = self.dataset.name.clone().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
        let pool = load_class_pool(path)?;
        let k = if self.dataset.zero_shot { Some(0) } else { self.dataset.k };
        let dataset = match k {
            Some(k) => reduce_to_kshot(name, &pool, k, self.run.seed)?,
            None => DatasetSpec::new(name, pool)?,
        };
        Ok(dataset)
    }

    /// Builds the backends the config describes.
    pub fn build_backends(&self) -> Result<Backends, PipelineError> {
        let b = &self.backends;
        let backends = match b.kind {
            BackendKind::Openai => Backends::new(
                Arc::new(OpenAiChat::from_env(&b.base_url)),
                Arc::new(OpenAiEmbed::from_env(&b.base_url, &b.embed_model, self.timeout())),
            ),
            BackendKind::Mock => {
                let embed = Arc::new(HashedTokenEmbedder::default());
                match &b.transcript {
                    Some(path) => Backends::new(Arc::new(TranscriptChat::load(path)?), embed),
                    None => Backends::new(Arc::new(SyntheticChat), embed),
                }
            }
        };
        Ok(backends
            .with_retry(RetryPolicy {
                max_retries: b.retries,
                ..RetryPolicy::default()
            })
            .with_requests_per_minute(b.requests_per_minute)
            .with_max_in_flight(b.max_in_flight))
    }

    /// Digest of everything that determines a run's output. Output location
    /// and throughput knobs are excluded, so a run can be resumed from a
    /// moved directory or with a different concurrency.
    pub fn fingerprint(&self, dataset: &DatasetSpec) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(run) = value.get_mut("run").and_then(|v| v.as_object_mut()) {
            run.remove("output_dir");
        }
        if let Some(b) = value.get_mut("backends").and_then(|v| v.as_object_mut()) {
            for key in ["max_in_flight", "retries", "timeout_secs", "requests_per_minute", "transcript"] {
                b.remove(key);
            }
        }
        if let Some(d) = value.get_mut("dataset").and_then(|v| v.as_object_mut()) {
            d.remove("classes");
        }
        let doc = serde_json::json!({
            "config": value,
            "dataset": { "name": dataset.name(), "classes": dataset.classes() },
        });
        digest_str(&doc.to_string())
    }
}
