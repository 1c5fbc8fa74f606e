//! Append-only canonical JSON-lines files.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::canonical;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
}

/// Append one record and flush it to stable storage before returning.
pub fn append<T: Serialize>(path: &Path, record: &T) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.display().to_string(), source };
    let mut line = canonical::to_vec(record).map_err(|e| JsonlError::Corrupt {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    line.push(b'\n');
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
    file.write_all(&line).map_err(io_err)?;
    file.sync_data().map_err(io_err)
}

/// Read every line of a file, requiring each to be canonical. A missing file
/// reads as empty.
pub fn read_all<T: DeserializeOwned + Serialize>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(JsonlError::Io { path: path.display().to_string(), source }),
    };
    read_lines(BufReader::new(file), &path.display().to_string())
}

pub fn read_lines<T: DeserializeOwned + Serialize>(
    reader: impl BufRead,
    origin: &str,
) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line.map_err(|source| JsonlError::Io { path: origin.to_owned(), source })?;
        if line.is_empty() {
            continue;
        }
        let record = canonical::from_canonical_slice(&line).map_err(|e| JsonlError::Corrupt {
            path: origin.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Replace a file's contents atomically (write to a sibling, then rename).
pub fn rewrite<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("tmp");
    {
        let mut file = File::create(&tmp).map_err(io_err)?;
        for record in records {
            let mut line = canonical::to_vec(record).map_err(|e| JsonlError::Corrupt {
                path: path.display().to_string(),
                line: 0,
                reason: e.to_string(),
            })?;
            line.push(b'\n');
            file.write_all(&line).map_err(io_err)?;
        }
        file.sync_data().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Write a single canonical JSON document atomically.
pub fn write_document<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.display().to_string(), source };
    let bytes = canonical::to_vec(value).map_err(|e| JsonlError::Corrupt {
        path: path.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;
    let tmp = path.with_extension("tmp");
    {
        let mut file = File::create(&tmp).map_err(io_err)?;
        file.write_all(&bytes).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;
    }
    std::fs::rename(&tmp, path).map_err(io_err)
}


/// Read a single canonical JSON document written by [`write_document`].
pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T, JsonlError> {
    let bytes = std::fs::read(path).map_err(|source| JsonlError::Io { path: path.display().to_string(), source })?;
    canonical::from_slice(&bytes).map_err(|e| JsonlError::Corrupt {
        path: path.display().to_string(),
        line: 1,
        reason: e.to_string(),
    })
}
