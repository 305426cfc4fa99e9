//! Line-delimited JSON and plain JSON file helpers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{0}")]
    Serialize(#[from] serde_json::Error),
}

/// Parses JSONL from any reader. Blank lines are skipped; `origin` is only
/// used in error messages.
pub fn parse_jsonl<T: DeserializeOwned>(reader: impl Read, origin: &Path) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|source| IoError::Read { path: origin.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|source| IoError::Parse { path: origin.to_path_buf(), line: idx + 1, source })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, IoError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })?;
    parse_jsonl(file, path)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String, IoError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), IoError> {
    let path = path.as_ref();
    let werr = |source| IoError::Write { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(werr)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(werr)?;
    }
    w.flush().map_err(werr)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| IoError::Parse { path: path.to_path_buf(), line: source.line(), source })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), IoError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}
