//! Line-delimited JSON helpers shared by the dataset and run-store code.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::DataError;

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads one record per non-blank line. Errors carry the 1-based line number.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Like [`read`], but a missing file yields an empty list.
pub fn read_if_exists<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    if path.exists() {
        read(path)
    } else {
        Ok(Vec::new())
    }
}

/// Writes (truncating) one compact JSON object per line.
pub fn write<'a, T, I>(path: &Path, records: I) -> Result<(), DataError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize to JSON");
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Append-only writer; each record is flushed as soon as it is written.
#[derive(Debug)]
pub struct Appender {
    file: File,
}

impl Appender {
    pub fn open(path: &Path) -> Result<Self, DataError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(Self { file })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record).expect("records serialize to JSON");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()
    }
}

/// Reads an append-only checkpoint file. A final line without its newline
/// is the remnant of an interrupted write and is dropped; the second value
/// reports whether that happened. A missing file is empty.
pub fn read_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, bool), DataError> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), false)),
        Err(e) => return Err(io_err(path, e)),
    };
    let mut lines: Vec<&str> = text.split('\n').collect();
    let tail = lines.pop().unwrap_or_default();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok((out, !tail.trim().is_empty()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_drops_a_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        assert_eq!(read_checkpoint::<u32>(&path).unwrap(), (vec![], false));
        std::fs::write(&path, "1\n2\n3").unwrap();
        assert_eq!(read_checkpoint::<u32>(&path).unwrap(), (vec![1, 2], true));
        std::fs::write(&path, "1\n2\n").unwrap();
        assert_eq!(read_checkpoint::<u32>(&path).unwrap(), (vec![1, 2], false));
        std::fs::write(&path, "1\nx\n2\n").unwrap();
        assert!(matches!(read_checkpoint::<u32>(&path), Err(DataError::Parse { line: 2, .. })));
    }

    #[test]
    fn appender_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        write(&path, &[1u32]).unwrap();
        let mut a = Appender::open(&path).unwrap();
        a.append(&2u32).unwrap();
        a.append(&3u32).unwrap();
        assert_eq!(read::<u32>(&path).unwrap(), vec![1, 2, 3]);
    }
}
