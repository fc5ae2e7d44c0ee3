//! Dataset model: class specifications, labeled examples and relabel statistics.
//!
//! A [`DatasetSpec`] is the validated k-shot seed set. Every class carries a
//! short human-written description and exactly `k` seed utterances (zero in
//! the zero-shot setting). Augmented output is a flat list of
//! [`LabeledExample`]s written one JSON object per line.

mod io;
mod stats;

use std::collections::HashSet;
use std::path::PathBuf;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixgen::Alpha;

pub use io::{emit_dataset, load_class_pool, load_dataset, load_examples, EmitFormat};
pub use stats::{compute_relabel_stats, ClassRelabelCount, RelabelStats};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}:{line}: malformed record: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("failed to access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("class name must not be empty")]
    EmptyClassName,
    #[error("duplicate class name `{0}`")]
    DuplicateClass(String),
    #[error("class `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("class `{0}` has an empty seed example")]
    EmptySeedExample(String),
    #[error("class `{class}` has {found} seed examples, expected {expected}")]
    UnequalShots {
        class: String,
        expected: usize,
        found: usize,
    },
    #[error("a dataset needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class `{class}` has {available} examples, cannot keep {requested}")]
    NotEnoughExamples {
        class: String,
        available: usize,
        requested: usize,
    },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("example {index}: {message}")]
    InvalidExample { index: usize, message: String },
}

/// One class: identifier, description and its seed utterances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub seed_examples: Vec<String>,
}

impl ClassSpec {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        seed_examples: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            seed_examples: seed_examples.into_iter().map(Into::into).collect(),
        }
    }

    /// Trims every field and checks the per-class invariants.
    fn normalized(self) -> Result<Self, DataError> {
        let name = self.name.trim().to_string();
        if name.is_empty() {
            return Err(DataError::EmptyClassName);
        }
        let description = self.description.trim().to_string();
        if description.is_empty() {
            return Err(DataError::EmptyDescription(name));
        }
        let mut seed_examples = Vec::with_capacity(self.seed_examples.len());
        for example in self.seed_examples {
            let example = example.trim();
            if example.is_empty() {
                return Err(DataError::EmptySeedExample(name));
            }
            seed_examples.push(example.to_string());
        }
        Ok(Self {
            name,
            description,
            seed_examples,
        })
    }
}

/// Validates a list of classes without requiring equal shot counts.
///
/// This is the shape of a full training split before k-shot reduction.
pub fn validate_class_pool(classes: Vec<ClassSpec>) -> Result<Vec<ClassSpec>, DataError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(classes.len());
    for class in classes {
        let class = class.normalized()?;
        if !seen.insert(class.name.clone()) {
            return Err(DataError::DuplicateClass(class.name));
        }
        out.push(class);
    }
    Ok(out)
}

/// A validated k-shot dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSpec {
    name: String,
    k: usize,
    classes: Vec<ClassSpec>,
}

impl DatasetSpec {
    pub fn new(name: impl Into<String>, classes: Vec<ClassSpec>) -> Result<Self, DataError> {
        let classes = validate_class_pool(classes)?;
        if classes.len() < 2 {
            return Err(DataError::TooFewClasses(classes.len()));
        }
        let k = classes[0].seed_examples.len();
        if let Some(bad) = classes.iter().find(|c| c.seed_examples.len() != k) {
            return Err(DataError::UnequalShots {
                class: bad.name.clone(),
                expected: k,
                found: bad.seed_examples.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            k,
            classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Shot count shared by every class.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn class(&self, name: &str) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.class_index(name).is_some()
    }

    /// Seed examples as labeled records, in class order.
    pub fn seed_examples(&self) -> Vec<LabeledExample> {
        self.classes
            .iter()
            .flat_map(|c| {
                c.seed_examples
                    .iter()
                    .map(move |text| LabeledExample::seed(text.clone(), c.name.clone()))
            })
            .collect()
    }
}

/// Keeps exactly `k` examples per class, sampled uniformly without
/// replacement. The kept examples stay in their original relative order, so
/// reducing an already k-shot dataset is the identity.
pub fn reduce_to_kshot(
    name: impl Into<String>,
    full: &[ClassSpec],
    k: usize,
    rng_seed: u64,
) -> Result<DatasetSpec, DataError> {
    let mut reduced = Vec::with_capacity(full.len());
    for (class_index, class) in full.iter().enumerate() {
        let available = class.seed_examples.len();
        if available < k {
            return Err(DataError::NotEnoughExamples {
                class: class.name.clone(),
                available,
                requested: k,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(class_index as u64);
        let mut keep = index::sample(&mut rng, available, k).into_vec();
        keep.sort_unstable();
        reduced.push(ClassSpec {
            name: class.name.clone(),
            description: class.description.clone(),
            seed_examples: keep
                .into_iter()
                .map(|i| class.seed_examples[i].clone())
                .collect(),
        });
    }
    DatasetSpec::new(name, reduced)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Seed,
    Generated,
}

/// Mixup provenance attached to generated examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub majority_class: String,
    pub minority_class: Option<String>,
    pub alpha: Option<Alpha>,
    /// Raw classifier answer the final label was resolved from; absent when
    /// relabeling was skipped.
    pub resolved_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl LabeledExample {
    pub fn seed(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
            origin: Origin::Seed,
            provenance: None,
        }
    }

    pub fn generated(
        text: impl Into<String>,
        label: impl Into<String>,
        provenance: Provenance,
    ) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
            origin: Origin::Generated,
            provenance: Some(provenance),
        }
    }

    /// Checks the origin/provenance pairing.
    pub fn check(&self) -> Result<(), String> {
        match (self.origin, &self.provenance) {
            (Origin::Seed, Some(_)) => Err("seed example carries provenance".into()),
            (Origin::Generated, None) => Err("generated example lacks provenance".into()),
            _ => Ok(()),
        }
    }
}
