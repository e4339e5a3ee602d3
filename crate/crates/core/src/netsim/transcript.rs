//! JSON Lines files: the transcript (one envelope per line, payload
//! replaced by its SHA-256) and the optional NOC dump (relayed envelopes
//! with payload bytes).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{ActorId, Envelope, MsgType, SimTime};
use crate::crypto::{hash, Digest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub seq: u64,
    pub sim_time: SimTime,
    pub from: ActorId,
    pub to: ActorId,
    pub via: Option<ActorId>,
    pub msg_type: MsgType,
    pub payload_hex_digest: Digest,
    pub size: usize,
}

impl TranscriptLine {
    pub fn from_envelope(e: &Envelope) -> Self {
        Self {
            seq: e.seq,
            sim_time: e.sim_time,
            from: e.from.clone(),
            to: e.to.clone(),
            via: e.via.clone(),
            msg_type: e.msg_type,
            payload_hex_digest: hash(&e.payload),
            size: e.size,
        }
    }

    pub fn is_local(&self) -> bool {
        self.from == self.to
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpLine {
    pub seq: u64,
    pub sim_time: SimTime,
    pub from: ActorId,
    pub to: ActorId,
    pub via: Option<ActorId>,
    pub msg_type: MsgType,
    pub size: usize,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
}

impl DumpLine {
    pub fn from_envelope(e: &Envelope) -> Self {
        Self {
            seq: e.seq,
            sim_time: e.sim_time,
            from: e.from.clone(),
            to: e.to.clone(),
            via: e.via.clone(),
            msg_type: e.msg_type,
            size: e.size,
            payload: e.payload.clone(),
        }
    }

    pub fn to_envelope(&self) -> Envelope {
        Envelope {
            seq: self.seq,
            sim_time: self.sim_time,
            from: self.from.clone(),
            to: self.to.clone(),
            via: self.via.clone(),
            msg_type: self.msg_type,
            payload: self.payload.clone(),
            size: self.size,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), TranscriptError> {
    let io = |source| TranscriptError::Io { path: path.to_owned(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("transcript lines serialize");
        out.push(b'\n');
    }
    fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(io)
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TranscriptError> {
    let f = fs::File::open(path).map_err(|source| TranscriptError::Io { path: path.to_owned(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|source| TranscriptError::Io { path: path.to_owned(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| TranscriptError::Parse {
            path: path.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_transcript(path: &Path, lines: &[TranscriptLine]) -> Result<(), TranscriptError> {
    write_lines(path, lines)
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptLine>, TranscriptError> {
    read_lines(path)
}

pub fn write_noc_dump(path: &Path, captured: &[Envelope]) -> Result<(), TranscriptError> {
    write_lines(path, captured.iter().map(DumpLine::from_envelope))
}

pub fn read_noc_dump(path: &Path) -> Result<Vec<DumpLine>, TranscriptError> {
    read_lines(path)
}
