//! Append-only JSONL log of accepted submissions.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use arena_eval_core::model::{CountAnnotation, RatingRecord};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    Rating {
        task_id: String,
        record: RatingRecord,
    },
    Count {
        task_id: String,
        rating_id: String,
        study_id: String,
        record: CountAnnotation,
    },
}

impl LogEvent {
    pub fn task_id(&self) -> &str {
        match self {
            LogEvent::Rating { task_id, .. } | LogEvent::Count { task_id, .. } => task_id,
        }
    }

    pub fn rating_id(&self) -> &str {
        match self {
            LogEvent::Rating { record, .. } => &record.rating_id,
            LogEvent::Count { rating_id, .. } => rating_id,
        }
    }
}

pub struct EventLog {
    path: PathBuf,
    file: File,
    entries: u64,
}

/// Reads every complete event in `path`. A final line without a newline
/// that does not parse is a torn write and is dropped; any other bad line
/// is an error.
pub fn read_events(path: &Path) -> Result<(Vec<LogEvent>, u64), ServiceError> {
    let mut events = Vec::new();
    let mut good_bytes = 0u64;
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((events, 0)),
        Err(e) => return Err(ServiceError::Io(format!("{}: {e}", path.display()))),
    };
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        // every append ends in a newline, so a tail without one is torn
        if !line.ends_with('\n') {
            break;
        }
        good_bytes += n as u64;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str::<LogEvent>(line.trim_end())
            .map_err(|e| ServiceError::Io(format!("{}:{lineno}: {e}", path.display())))?;
        events.push(ev);
    }
    Ok((events, good_bytes))
}

impl EventLog {
    /// Opens (creating if needed) the log and returns it with its events.
    pub fn open(path: &Path) -> Result<(Self, Vec<LogEvent>), ServiceError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ServiceError::Io(format!("{}: {e}", dir.display())))?;
        }
        let (events, good_bytes) = read_events(path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        if file.metadata().map(|m| m.len()).unwrap_or(0) > good_bytes {
            file.set_len(good_bytes).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        }
        let entries = events.len() as u64;
        Ok((Self { path: path.to_path_buf(), file, entries }, events))
    }

    pub fn append(&mut self, event: &LogEvent) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| ServiceError::Io(format!("{}: {e}", self.path.display())))?;
        self.entries += 1;
        Ok(())
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }
}

/// Rating records of a log, in log order.
pub fn ratings_of(events: &[LogEvent]) -> Vec<RatingRecord> {
    events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Rating { record, .. } => Some(record.clone()),
            LogEvent::Count { .. } => None,
        })
        .collect()
}

pub fn counts_of(events: &[LogEvent]) -> Vec<CountAnnotation> {
    events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Count { record, .. } => Some(record.clone()),
            LogEvent::Rating { .. } => None,
        })
        .collect()
}
