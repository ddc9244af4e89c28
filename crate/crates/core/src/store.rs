//! Append-only JSONL event log per run.
//!
//! Layout: `{root}/runs/{run_id}/events.jsonl`, one event per line. Each line
//! ends in a CRC-32 over the line's body so a torn write is detectable.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{FeasibilityVerdict, ReviewDecision, RunConfig, Task, TaskId};
use crate::providers::ChatResponse;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("no run named {0}")]
    UnknownRun(String),
    #[error("run {0} already exists")]
    RunExists(String),
    #[error("run id {0:?} is not a valid directory name")]
    BadRunId(String),
    #[error("run {0} is locked by another writer")]
    Locked(String),
    #[error("{path}:{line}: corrupt event: {reason}")]
    CorruptLog { path: String, line: usize, reason: String },
    #[error("storage is full: {0}")]
    StorageFull(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: io::Error) -> StoreError {
    if e.kind() == io::ErrorKind::StorageFull {
        StoreError::StorageFull(path.display().to_string())
    } else {
        StoreError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Perturb,
    Review,
    Classify,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Perturb => "perturb",
            Stage::Review => "review",
            Stage::Classify => "classify",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    RunCreated {
        config: RunConfig,
    },
    /// A model or translator exchange, keyed by its replay digest.
    ProviderCall {
        role: String,
        digest: String,
        response: ChatResponse,
    },
    TaskAccepted {
        slot: u32,
        task: Task,
    },
    VariantCreated {
        generation: u32,
        task: Task,
    },
    VariantFailed {
        parent_id: TaskId,
        variant_index: u32,
        generation: u32,
        error: String,
    },
    ReviewDecided {
        decision: ReviewDecision,
    },
    VerdictRecorded {
        verdict: FeasibilityVerdict,
    },
    /// Classification of a set stopped on a provider failure.
    SetAborted {
        set_id: TaskId,
        error: String,
    },
    StageCompleted {
        stage: Stage,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::RunCreated { .. } => "run_created",
            Event::ProviderCall { .. } => "provider_call",
            Event::TaskAccepted { .. } => "task_accepted",
            Event::VariantCreated { .. } => "variant_created",
            Event::VariantFailed { .. } => "variant_failed",
            Event::ReviewDecided { .. } => "review_decided",
            Event::VerdictRecorded { .. } => "verdict_recorded",
            Event::SetAborted { .. } => "set_aborted",
            Event::StageCompleted { .. } => "stage_completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub run_id: String,
    pub timestamp: DateTime<Utc>,
    pub event: Event,
}

const CHECKSUM_SUFFIX_LEN: usize = r#","checksum":"00000000"}"#.len();

fn encode(envelope: &Envelope) -> String {
    let body = serde_json::to_string(envelope).expect("events serialize");
    let crc = crc32fast::hash(body.as_bytes());
    format!("{},\"checksum\":\"{crc:08x}\"}}", &body[..body.len() - 1])
}

fn decode(line: &str) -> Result<Envelope, String> {
    if line.len() < CHECKSUM_SUFFIX_LEN + 2 || !line.ends_with("\"}") {
        return Err("truncated line".into());
    }
    let split = line.len() - CHECKSUM_SUFFIX_LEN;
    let (head, suffix) = line.split_at(split);
    let hex = suffix
        .strip_prefix(",\"checksum\":\"")
        .and_then(|s| s.strip_suffix("\"}"))
        .ok_or("missing checksum")?;
    let expected = u32::from_str_radix(hex, 16).map_err(|_| "malformed checksum")?;
    let body = format!("{head}}}");
    if crc32fast::hash(body.as_bytes()) != expected {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(&body).map_err(|e| format!("undecodable event: {e}"))
}

/// Events read from a log, with a torn final line reported separately.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRead {
    pub events: Vec<Envelope>,
    /// Byte length of the intact prefix.
    pub intact_len: u64,
    pub torn_tail: Option<StoreError>,
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
    fsync: bool,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore {
            root: root.into(),
            fsync: true,
        }
    }

    /// Whether each append is flushed to disk before returning.
    pub fn with_fsync(mut self, fsync: bool) -> Self {
        self.fsync = fsync;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn events_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join("events.jsonl")
    }

    pub fn report_path(&self, run_id: &str, ext: &str) -> PathBuf {
        self.run_dir(run_id).join(format!("report.{ext}"))
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.events_path(run_id).is_file()
    }

    /// Starts a run log with its `RunCreated` event.
    pub fn create(&self, run_id: &str, config: &RunConfig) -> Result<RunWriter, StoreError> {
        check_run_id(run_id)?;
        if self.exists(run_id) {
            return Err(StoreError::RunExists(run_id.to_string()));
        }
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let mut writer = self.open_locked(run_id, 0, 0)?;
        writer.append(Event::RunCreated {
            config: config.clone(),
        })?;
        Ok(writer)
    }

    /// Opens an existing run for appending. A torn final line left by a
    /// crash is cut off; corruption anywhere else is an error.
    pub fn open(&self, run_id: &str) -> Result<RunWriter, StoreError> {
        check_run_id(run_id)?;
        let read = self.read_lenient(run_id)?;
        let last_seq = read.events.last().map_or(0, |e| e.seq);
        if let Some(tail) = &read.torn_tail {
            tracing::warn!(run = run_id, %tail, "discarding torn final event");
        }
        self.open_locked(run_id, last_seq, read.intact_len)
    }

    fn open_locked(&self, run_id: &str, last_seq: u64, intact_len: u64) -> Result<RunWriter, StoreError> {
        let lock_path = self.run_dir(run_id).join("lock");
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| io_err(&lock_path, e))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(StoreError::Locked(run_id.to_string())),
            Err(TryLockError::Error(e)) => return Err(io_err(&lock_path, e)),
        }
        let path = self.events_path(run_id);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        let len = file.metadata().map_err(|e| io_err(&path, e))?.len();
        if len > intact_len {
            file.set_len(intact_len).map_err(|e| io_err(&path, e))?;
        }
        Ok(RunWriter {
            file,
            path,
            _lock: lock,
            run_id: run_id.to_string(),
            next_seq: last_seq + 1,
            fsync: self.fsync,
        })
    }

    /// Reads every event; any corrupt line is an error.
    pub fn read(&self, run_id: &str) -> Result<Vec<Envelope>, StoreError> {
        let read = self.read_lenient(run_id)?;
        match read.torn_tail {
            Some(e) => Err(e),
            None => Ok(read.events),
        }
    }

    /// Reads every event, tolerating a damaged final line.
    pub fn read_lenient(&self, run_id: &str) -> Result<LogRead, StoreError> {
        let path = self.events_path(run_id);
        let file = File::open(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::UnknownRun(run_id.to_string()),
            _ => io_err(&path, e),
        })?;
        let mut reader = BufReader::new(file);
        let mut events: Vec<Envelope> = Vec::new();
        let mut intact_len = 0u64;
        let mut pending: Option<StoreError> = None;
        let mut line_no = 0usize;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = reader.read_until(b'\n', &mut buf).map_err(|e| io_err(&path, e))?;
            if n == 0 {
                break;
            }
            line_no += 1;
            if let Some(err) = pending.take() {
                // a bad line followed by more data is not a torn tail
                return Err(err);
            }
            let corrupt = |reason: String| StoreError::CorruptLog {
                path: path.display().to_string(),
                line: line_no,
                reason,
            };
            let complete = buf.last() == Some(&b'\n');
            let text = match std::str::from_utf8(&buf) {
                Ok(t) => t.trim_end_matches(['\n', '\r']),
                Err(_) => {
                    pending = Some(corrupt("invalid UTF-8".into()));
                    continue;
                }
            };
            if !complete {
                pending = Some(corrupt("unterminated final line".into()));
                continue;
            }
            match decode(text) {
                Ok(env) => {
                    let expected = events.last().map_or(1, |e| e.seq + 1);
                    if env.seq != expected || env.run_id != run_id {
                        return Err(corrupt(format!(
                            "expected seq {expected} of run {run_id}, found seq {} of run {}",
                            env.seq, env.run_id
                        )));
                    }
                    events.push(env);
                    intact_len += n as u64;
                }
                Err(reason) => pending = Some(corrupt(reason)),
            }
        }
        Ok(LogRead {
            events,
            intact_len,
            torn_tail: pending,
        })
    }

    /// Run ids with a log, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("runs");
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir, e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.exists(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

fn check_run_id(run_id: &str) -> Result<(), StoreError> {
    let ok = !run_id.is_empty()
        && run_id.len() <= 128
        && run_id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
        && !run_id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(StoreError::BadRunId(run_id.to_string()))
    }
}

/// Exclusive appender for one run. Holds the run's lock file until dropped.
#[derive(Debug)]
pub struct RunWriter {
    file: File,
    path: PathBuf,
    _lock: File,
    run_id: String,
    next_seq: u64,
    fsync: bool,
}

impl RunWriter {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// Appends `event` and returns its sequence number.
    pub fn append(&mut self, event: Event) -> Result<u64, StoreError> {
        let seq = self.next_seq;
        let env = Envelope {
            seq,
            run_id: self.run_id.clone(),
            timestamp: now(),
            event,
        };
        let mut line = encode(&env);
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| io_err(&self.path, e))?;
        if self.fsync {
            self.file.sync_data().map_err(|e| io_err(&self.path, e))?;
        }
        self.next_seq += 1;
        Ok(seq)
    }
}

fn now() -> DateTime<Utc> {
    // millisecond precision keeps the text form stable across round trips
    let t = Utc::now();
    DateTime::parse_from_rfc3339(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
        .expect("own rfc3339 output parses")
        .with_timezone(&Utc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;

    fn store() -> (tempfile::TempDir, RunStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = RunStore::new(dir.path()).with_fsync(false);
        (dir, s)
    }

    fn task_event(slot: u32) -> Event {
        Event::TaskAccepted {
            slot,
            task: Task::original(
                format!("sci-{slot:03}").into(),
                Domain::Science,
                "Compute it.",
                serde_json::from_str(r#"{"v": 12.50, "w": 1.5e3}"#).unwrap(),
            )
            .unwrap(),
        }
    }

    #[test]
    fn sequence_starts_at_one_and_increases() {
        let (_d, s) = store();
        let mut w = s.create("r1", &RunConfig::default()).unwrap();
        assert_eq!(w.append(task_event(0)).unwrap(), 2);
        assert_eq!(w.append(task_event(1)).unwrap(), 3);
        let events = s.read("r1").unwrap();
        assert_eq!(events.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(events[0].event.kind(), "run_created");
    }

    #[test]
    fn events_round_trip_exactly() {
        let (_d, s) = store();
        let mut w = s.create("r1", &RunConfig::default()).unwrap();
        w.append(task_event(0)).unwrap();
        let events = s.read("r1").unwrap();
        let Event::TaskAccepted { task, .. } = &events[1].event else { panic!() };
        assert_eq!(task.data["v"].to_string(), "12.50");
        assert_eq!(events[1].event, task_event(0));
        let line = fs::read_to_string(s.events_path("r1")).unwrap();
        assert!(line.lines().all(|l| l.contains("\"checksum\":\"")));
    }

    #[test]
    fn torn_tail_is_localized_and_repaired() {
        let (_d, s) = store();
        {
            let mut w = s.create("r1", &RunConfig::default()).unwrap();
            w.append(task_event(0)).unwrap();
        }
        let path = s.events_path("r1");
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"seq":3,"run_id":"r1","times"#).unwrap();
        drop(f);

        match s.read("r1") {
            Err(StoreError::CorruptLog { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let lenient = s.read_lenient("r1").unwrap();
        assert_eq!(lenient.events.len(), 2);

        let mut w = s.open("r1").unwrap();
        assert_eq!(w.append(task_event(1)).unwrap(), 3);
        drop(w);
        assert_eq!(s.read("r1").unwrap().len(), 3);
    }

    #[test]
    fn corruption_before_the_end_is_fatal() {
        let (_d, s) = store();
        {
            let mut w = s.create("r1", &RunConfig::default()).unwrap();
            w.append(task_event(0)).unwrap();
            w.append(task_event(1)).unwrap();
        }
        let path = s.events_path("r1");
        let text = fs::read_to_string(&path).unwrap();
        let flipped = text.replacen("sci-000", "sci-999", 1);
        fs::write(&path, flipped).unwrap();
        assert!(matches!(s.read_lenient("r1"), Err(StoreError::CorruptLog { line: 2, .. })));
        assert!(s.open("r1").is_err());
    }

    #[test]
    fn one_writer_at_a_time() {
        let (_d, s) = store();
        let w = s.create("r1", &RunConfig::default()).unwrap();
        assert!(matches!(s.open("r1"), Err(StoreError::Locked(_))));
        drop(w);
        assert!(s.open("r1").is_ok());
    }

    #[test]
    fn run_ids_and_missing_runs() {
        let (_d, s) = store();
        assert!(matches!(s.create("../x", &RunConfig::default()), Err(StoreError::BadRunId(_))));
        assert!(matches!(s.read("nope"), Err(StoreError::UnknownRun(_))));
        s.create("b", &RunConfig::default()).unwrap();
        s.create("a", &RunConfig::default()).unwrap();
        assert_eq!(s.list().unwrap(), vec!["a", "b"]);
        assert!(matches!(s.create("a", &RunConfig::default()), Err(StoreError::RunExists(_))));
    }
}
