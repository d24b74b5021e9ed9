//! Newline-delimited JSON response log. A record is acknowledged only after
//! its full line (newline included) has been written and synced, so a
//! trailing fragment without a newline was never acknowledged and is
//! dropped on replay.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::StudyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identification {
    Synthetic,
    Traditional,
    CannotTell,
}

/// Stored response. `timestamp` is UTC seconds since the Unix epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewResponse {
    pub reviewer_id: String,
    pub position: usize,
    pub effectiveness: u8,
    pub quality: u8,
    pub identification: Identification,
    pub timestamp: i64,
}

/// Response as posted by a client; the server fills in a missing timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSubmission {
    pub reviewer_id: String,
    pub position: usize,
    pub effectiveness: u8,
    pub quality: u8,
    pub identification: Identification,
    #[serde(default)]
    pub timestamp: Option<i64>,
}

impl ResponseSubmission {
    pub fn validate(&self) -> Result<(), StudyError> {
        for (name, v) in [
            ("effectiveness", self.effectiveness),
            ("quality", self.quality),
        ] {
            if !(1..=4).contains(&v) {
                return Err(StudyError::InvalidResponse(format!(
                    "{name} must be 1-4, got {v}"
                )));
            }
        }
        if self.reviewer_id.is_empty() {
            return Err(StudyError::InvalidResponse("empty reviewer_id".into()));
        }
        Ok(())
    }

    pub fn stamp(self, now: i64) -> ReviewResponse {
        ReviewResponse {
            reviewer_id: self.reviewer_id,
            position: self.position,
            effectiveness: self.effectiveness,
            quality: self.quality,
            identification: self.identification,
            timestamp: self.timestamp.unwrap_or(now),
        }
    }
}

impl From<ReviewResponse> for ResponseSubmission {
    fn from(r: ReviewResponse) -> Self {
        Self {
            reviewer_id: r.reviewer_id,
            position: r.position,
            effectiveness: r.effectiveness,
            quality: r.quality,
            identification: r.identification,
            timestamp: Some(r.timestamp),
        }
    }
}

#[derive(Debug)]
pub struct ResponseLog {
    path: PathBuf,
    file: File,
}

impl ResponseLog {
    /// Open (creating if needed) and replay the log. A torn final line is
    /// cut off the file; a malformed complete line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<ReviewResponse>), StudyError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            warn!(
                "{}: dropping {} bytes of unacknowledged partial record",
                path.display(),
                bytes.len() - complete
            );
            file.set_len(complete as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;

        let records = parse_records(&path, &bytes[..complete])?;
        Ok((Self { path, file }, records))
    }

    /// Read the log without modifying it; a torn final line is ignored.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<ReviewResponse>, StudyError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            warn!(
                "{}: ignoring {} bytes of partial record",
                path.display(),
                bytes.len() - complete
            );
        }
        parse_records(path, &bytes[..complete])
    }

    /// Durably append one record; returns once the line is on disk.
    pub fn append(&mut self, r: &ReviewResponse) -> Result<(), StudyError> {
        let mut line = serde_json::to_vec(r).map_err(|e| StudyError::Malformed {
            what: "response".into(),
            detail: e.to_string(),
        })?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn parse_records(path: &Path, bytes: &[u8]) -> Result<Vec<ReviewResponse>, StudyError> {
    let mut records = Vec::new();
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let r: ReviewResponse =
            serde_json::from_slice(line).map_err(|e| StudyError::Malformed {
                what: format!("{} line {}", path.display(), i + 1),
                detail: e.to_string(),
            })?;
        records.push(r);
    }
    Ok(records)
}
