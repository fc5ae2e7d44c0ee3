use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::{validate_class_pool, ClassSpec, DataError, DatasetSpec, LabeledExample, Origin};
use crate::jsonl;

/// Output layout for [`emit_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmitFormat {
    /// One JSON object per line with `text`, `label`, `origin` and optional
    /// `provenance`.
    #[default]
    Jsonl,
    /// `text,label` with a header row; provenance is dropped.
    Csv,
}

impl std::str::FromStr for EmitFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown format `{other}` (expected jsonl or csv)")),
        }
    }
}

/// Loads class metadata records without the equal-k requirement.
pub fn load_class_pool(path: &Path) -> Result<Vec<ClassSpec>, DataError> {
    validate_class_pool(jsonl::read(path)?)
}

/// Loads and validates a k-shot dataset from a class metadata file. The
/// dataset is named after the file stem.
pub fn load_dataset(path: &Path) -> Result<DatasetSpec, DataError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    DatasetSpec::new(name, jsonl::read(path)?)
}

pub fn load_examples(path: &Path) -> Result<Vec<LabeledExample>, DataError> {
    let examples: Vec<LabeledExample> = jsonl::read(path)?;
    for (index, example) in examples.iter().enumerate() {
        example
            .check()
            .map_err(|message| DataError::InvalidExample { index, message })?;
    }
    Ok(examples)
}

/// Writes examples with seeds first, then generated examples, each group in
/// input order. Identical input always produces identical bytes.
pub fn emit_dataset(
    examples: &[LabeledExample],
    path: &Path,
    format: EmitFormat,
) -> Result<(), DataError> {
    for (index, example) in examples.iter().enumerate() {
        example
            .check()
            .map_err(|message| DataError::InvalidExample { index, message })?;
    }
    let ordered: Vec<&LabeledExample> = examples
        .iter()
        .filter(|e| e.origin == Origin::Seed)
        .chain(examples.iter().filter(|e| e.origin == Origin::Generated))
        .collect();
    match format {
        EmitFormat::Jsonl => jsonl::write(path, ordered),
        EmitFormat::Csv => {
            let io_err = |e: std::io::Error| DataError::Io {
                path: path.to_path_buf(),
                source: e,
            };
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["text", "label"]).map_err(|e| io_err(e.into()))?;
            for e in ordered {
                w.write_record([e.text.as_str(), e.label.as_str()])
                    .map_err(|e| io_err(e.into()))?;
            }
            let bytes = w.into_inner().map_err(|e| io_err(e.into_error()))?;
            File::create(path)
                .and_then(|mut f| f.write_all(&bytes))
                .map_err(io_err)
        }
    }
}
