use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::DataError;
use crate::jsonl::{self, Appender};
use crate::mixgen::BatchOutcome;
use crate::relabel::RelabelRecord;

pub const AUGMENTED_FILE: &str = "augmented.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";
pub const RELABELS_FILE: &str = "relabels.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
const CHECKPOINT_DIR: &str = "checkpoints";
const BATCH_CHECKPOINT: &str = "generation_batches.jsonl";
const RELABEL_CHECKPOINT: &str = "relabel_records.jsonl";

fn io(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File layout of one run directory.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    batches: Mutex<Option<Appender>>,
    relabels: Mutex<Option<Appender>>,
}

impl RunStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            batches: Mutex::new(None),
            relabels: Mutex::new(None),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn checkpoint(&self, file: &str) -> PathBuf {
        self.dir.join(CHECKPOINT_DIR).join(file)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path(MANIFEST_FILE)
    }

    /// Creates the directory tree and removes checkpoints of any earlier
    /// run.
    pub fn prepare_fresh(&self) -> Result<(), DataError> {
        let checkpoints = self.dir.join(CHECKPOINT_DIR);
        std::fs::create_dir_all(&checkpoints).map_err(|e| io(&checkpoints, e))?;
        for file in [BATCH_CHECKPOINT, RELABEL_CHECKPOINT] {
            let path = self.checkpoint(file);
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| io(&path, e))?;
            }
        }
        Ok(())
    }

    pub fn load_batches(&self) -> Result<BTreeMap<(usize, usize), BatchOutcome>, DataError> {
        let records: Vec<BatchOutcome> = self.load_checkpoint(BATCH_CHECKPOINT)?;
        Ok(records
            .into_iter()
            .map(|b| ((b.class_index, b.batch_index), b))
            .collect())
    }

    pub fn load_relabels(&self) -> Result<BTreeMap<usize, RelabelRecord>, DataError> {
        let records: Vec<RelabelRecord> = self.load_checkpoint(RELABEL_CHECKPOINT)?;
        Ok(records.into_iter().map(|r| (r.generation_index, r)).collect())
    }

    /// Reads a checkpoint, rewriting it without a torn final line.
    fn load_checkpoint<T: Serialize + DeserializeOwned>(&self, file: &str) -> Result<Vec<T>, DataError> {
        let path = self.checkpoint(file);
        let (records, torn) = jsonl::read_checkpoint(&path)?;
        if torn {
            log::warn!("{}: dropping an incomplete final record", path.display());
            jsonl::write(&path, &records)?;
        }
        Ok(records)
    }

    pub fn append_batch(&self, batch: &BatchOutcome) -> Result<(), DataError> {
        Self::append(&self.batches, &self.checkpoint(BATCH_CHECKPOINT), batch)
    }

    pub fn append_relabel(&self, record: &RelabelRecord) -> Result<(), DataError> {
        Self::append(&self.relabels, &self.checkpoint(RELABEL_CHECKPOINT), record)
    }

    fn append<T: Serialize>(slot: &Mutex<Option<Appender>>, path: &Path, record: &T) -> Result<(), DataError> {
        let mut slot = slot.lock().unwrap_or_else(|p| p.into_inner());
        if slot.is_none() {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
            }
            *slot = Some(Appender::open(path)?);
        }
        slot.as_mut()
            .expect("appender opened above")
            .append(record)
            .map_err(|e| io(path, e))
    }

    /// Writes `value` as pretty JSON via a temporary file and rename.
    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<(), DataError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let path = self.path(file);
        let tmp = self.path(&format!("{file}.tmp"));
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        std::fs::write(&tmp, text).map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))
    }
}
