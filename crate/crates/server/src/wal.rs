//! Append-only event log.
//!
//! One JSON object per line:
//!
//! ```text
//! {"crc32":2046521123,"record":{"index":0,"at":0,"op":{"op":"register_agent",...}}}
//! ```
//!
//! `crc32` covers the exact bytes of the `record` value, so any flipped byte
//! inside a record is caught even when the line still parses as JSON.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::node::LogRecord;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("event log I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt event log record #{record} at byte offset {offset}: {reason}")]
    Corrupt { record: u64, offset: u64, reason: String },
}

#[derive(Serialize)]
struct LineOut<'a> {
    crc32: u32,
    record: &'a RawValue,
}

#[derive(Deserialize)]
struct LineIn<'a> {
    crc32: u32,
    #[serde(borrow)]
    record: &'a RawValue,
}

/// A record read back from disk together with where it started.
#[derive(Debug)]
pub struct Replayed {
    pub offset: u64,
    pub record: LogRecord,
}

pub trait EventLog: Send + Sync {
    fn append(&mut self, record: &LogRecord) -> Result<(), LogError>;
}

/// Log that keeps nothing; used when the server runs without `--log`.
#[derive(Debug, Default)]
pub struct NullLog;

impl EventLog for NullLog {
    fn append(&mut self, _record: &LogRecord) -> Result<(), LogError> {
        Ok(())
    }
}

#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl FileLog {
    /// Reads every record in `path` (missing file = empty log) and opens the
    /// file for appending. Fails on the first record that does not verify.
    pub fn open(path: impl AsRef<Path>, fsync: bool) -> Result<(FileLog, Vec<Replayed>), LogError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let records = if path.exists() {
            read_records(&path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok((FileLog { path, file, fsync }, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventLog for FileLog {
    fn append(&mut self, record: &LogRecord) -> Result<(), LogError> {
        let line = encode_line(record);
        let io = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(line.as_bytes()).map_err(io)?;
        if self.fsync {
            self.file.sync_data().map_err(io)?;
        }
        Ok(())
    }
}

pub fn encode_line(record: &LogRecord) -> String {
    let body = serde_json::to_string(record).expect("log records serialize");
    let raw = RawValue::from_string(body).expect("serde_json output is valid JSON");
    let crc32 = crc32fast::hash(raw.get().as_bytes());
    let mut line = serde_json::to_string(&LineOut { crc32, record: &raw }).expect("line serializes");
    line.push('\n');
    line
}

fn read_records(path: &Path) -> Result<Vec<Replayed>, LogError> {
    let file = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut offset = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|source| LogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if n == 0 {
            break;
        }
        let index = out.len() as u64;
        let corrupt = |reason: String| LogError::Corrupt {
            record: index,
            offset,
            reason,
        };
        if buf.last() != Some(&b'\n') {
            return Err(corrupt("truncated record (no trailing newline)".into()));
        }
        let text = std::str::from_utf8(&buf[..n - 1]).map_err(|e| corrupt(format!("invalid UTF-8: {e}")))?;
        let line: LineIn<'_> = serde_json::from_str(text).map_err(|e| corrupt(format!("unparseable line: {e}")))?;
        let actual = crc32fast::hash(line.record.get().as_bytes());
        if actual != line.crc32 {
            return Err(corrupt(format!("checksum mismatch: stored {}, computed {actual}", line.crc32)));
        }
        let record: LogRecord =
            serde_json::from_str(line.record.get()).map_err(|e| corrupt(format!("bad record: {e}")))?;
        if record.index != index {
            return Err(corrupt(format!("expected index {index}, found {}", record.index)));
        }
        out.push(Replayed { offset, record });
        offset += n as u64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::{LogRecord, Op};

    fn rec(index: u64) -> LogRecord {
        LogRecord {
            index,
            at: index * 10,
            op: Op::AdvanceClock { seconds: index + 1 },
            response: None,
        }
    }

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        let (mut log, existing) = FileLog::open(&path, false).unwrap();
        assert!(existing.is_empty());
        for i in 0..3 {
            log.append(&rec(i)).unwrap();
        }
        drop(log);
        let (_, replayed) = FileLog::open(&path, false).unwrap();
        let got: Vec<u64> = replayed.iter().map(|r| r.record.index).collect();
        assert_eq!(got, [0, 1, 2]);
        assert_eq!(replayed[0].offset, 0);
        assert_eq!(replayed[1].offset, encode_line(&rec(0)).len() as u64);
    }

    #[test]
    fn flipped_byte_reports_record_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        let (mut log, _) = FileLog::open(&path, false).unwrap();
        for i in 0..8 {
            log.append(&rec(i)).unwrap();
        }
        drop(log);
        let mut bytes = std::fs::read(&path).unwrap();
        let offset5: usize = (0..5).map(|i| encode_line(&rec(i)).len()).sum();
        // flip a digit inside record 5's "at" field
        let line5 = encode_line(&rec(5));
        let at_pos = line5.find("\"at\":").unwrap() + 5;
        bytes[offset5 + at_pos] = b'9';
        std::fs::write(&path, &bytes).unwrap();
        match FileLog::open(&path, false).unwrap_err() {
            LogError::Corrupt { record, offset, .. } => {
                assert_eq!(record, 5);
                assert_eq!(offset, offset5 as u64);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn truncated_tail_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.ndjson");
        let mut line = encode_line(&rec(0));
        line.push_str(&encode_line(&rec(1))[..10]);
        std::fs::write(&path, line).unwrap();
        assert!(matches!(FileLog::open(&path, false), Err(LogError::Corrupt { record: 1, .. })));
    }
}
