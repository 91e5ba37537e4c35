//! Append-only JSON-lines files.
//!
//! Records are written as whole lines and flushed to disk before an append
//! returns. A trailing partial line left by a crash is cut off on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line} is corrupt: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads every complete line of `path`. A missing file reads as empty.
/// An unterminated final line is truncated away.
pub(crate) fn read_complete_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::io(path, e)),
    };
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log_truncation(path, bytes.len() - complete);
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| StoreError::io(path, e))?;
        file.set_len(complete as u64)
            .map_err(|e| StoreError::io(path, e))?;
    }
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| StoreError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn log_truncation(path: &Path, dropped: usize) {
    log::warn!(
        "{} ended with a partial record; dropped {dropped} bytes",
        path.display()
    );
}

/// Appends `lines` (each without newline) with a single write, then syncs.
pub(crate) fn append_lines(path: &Path, lines: &[String]) -> Result<(), StoreError> {
    if lines.is_empty() {
        return Ok(());
    }
    let mut buf = String::new();
    for line in lines {
        debug_assert!(!line.contains('\n'));
        buf.push_str(line);
        buf.push('\n');
    }
    let mut file: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| StoreError::io(path, e))?;
    file.write_all(buf.as_bytes())
        .and_then(|_| file.flush())
        .and_then(|_| file.sync_data())
        .map_err(|e| StoreError::io(path, e))
}

/// A typed append-only JSON-lines file with its records held in memory.
#[derive(Debug)]
pub struct Journal<T> {
    path: PathBuf,
    entries: Vec<T>,
    _marker: PhantomData<fn() -> T>,
}

impl<T: Serialize + DeserializeOwned> Journal<T> {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let entries = read_complete_lines(&path)?
            .iter()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(idx, line)| {
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: idx + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<T>, _>>()?;
        Ok(Journal {
            path,
            entries,
            _marker: PhantomData,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn append(&mut self, items: Vec<T>) -> Result<(), StoreError> {
        let lines = items
            .iter()
            .map(|item| serde_json::to_string(item).expect("journal records serialize"))
            .collect::<Vec<_>>();
        append_lines(&self.path, &lines)?;
        self.entries.extend(items);
        Ok(())
    }
}
