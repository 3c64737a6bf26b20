//! Append-only NDJSON journal of handled events and the records they touched.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::action::SequencedAction;
use super::event::ChatEvent;
use super::Ack;
use crate::assistant::EditProposal;
use crate::workflow::{Discussion, FlowInstance};

/// Full copies of every record an event touched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDelta {
    #[serde(default)]
    pub flows: Vec<FlowInstance>,
    #[serde(default)]
    pub proposals: Vec<EditProposal>,
    #[serde(default)]
    pub discussions: Vec<Discussion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum JournalRecord {
    Event {
        event: ChatEvent,
        ack: Ack,
        #[serde(flatten)]
        delta: StateDelta,
        actions: Vec<SequencedAction>,
    },
    Sweep {
        at: DateTime<Utc>,
        #[serde(flatten)]
        delta: StateDelta,
        actions: Vec<SequencedAction>,
    },
}

impl JournalRecord {
    pub fn delta(&self) -> &StateDelta {
        match self {
            JournalRecord::Event { delta, .. } | JournalRecord::Sweep { delta, .. } => delta,
        }
    }

    pub fn actions(&self) -> &[SequencedAction] {
        match self {
            JournalRecord::Event { actions, .. } | JournalRecord::Sweep { actions, .. } => actions,
        }
    }
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// `index` counts records from 0; `line` is 1-based.
    #[error("journal {path} is corrupt at record {index} (line {line}): {reason}")]
    Corrupt {
        path: PathBuf,
        index: usize,
        line: usize,
        reason: String,
    },
}

/// Reads every record. Any line that is not a complete record, including
/// a final line cut short by a crash, is reported as corruption.
pub fn read_journal(path: &Path) -> Result<Vec<JournalRecord>, JournalError> {
    let io_err = |source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err)? == 0 {
            break;
        }
        number += 1;
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| JournalError::Corrupt {
            path: path.to_path_buf(),
            index: records.len(),
            line: number,
            reason,
        };
        if !line.ends_with('\n') {
            return Err(corrupt("record is truncated".into()));
        }
        let record = serde_json::from_str::<JournalRecord>(line.trim_end()).map_err(|e| corrupt(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    /// Reads the existing records and opens the file for appending.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, Vec<JournalRecord>), JournalError> {
        let path = path.into();
        let records = read_journal(&path)?;
        let io_err = |source| JournalError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok((Self { path, file }, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &JournalRecord) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(record).expect("journal records serialize");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.sync_data())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })
    }
}
