//! Durable storage: an append-only JSON-Lines event log plus a periodic
//! snapshot of every stored label.
//!
//! The log is never rewritten. A snapshot records the sequence number it
//! covers, so startup loads the snapshot and then applies only later log
//! lines. A torn final line (crash during a write) is discarded; any other
//! unreadable line is an error.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{AdjudicationState, LabelSubmitted, StateError};

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 50;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
    #[error("replayed event rejected: {0}")]
    Replay(#[from] StateError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    #[serde(rename = "type")]
    kind: String,
    #[serde(flatten)]
    event: LabelSubmitted,
}

const KIND: &str = "label_submitted";

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    submissions: Vec<LabelSubmitted>,
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub struct EventLog {
    dir: PathBuf,
    file: File,
    seq: u64,
    snapshot_every: u64,
}

impl EventLog {
    /// Opens (creating if needed) the store in `dir` and returns it with the
    /// events that must be applied to a fresh state, in order.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(EventLog, Vec<LabelSubmitted>), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log_path = dir.join(LOG_FILE);
        let snap_path = dir.join(SNAPSHOT_FILE);

        let (mut replay, snap_seq) = match fs::read_to_string(&snap_path) {
            Ok(text) => {
                let snap: Snapshot = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                    path: snap_path.display().to_string(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
                (snap.submissions, snap.seq)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (Vec::new(), 0),
            Err(e) => return Err(io_err(&snap_path)(e)),
        };

        let text = match fs::read_to_string(&log_path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(io_err(&log_path)(e)),
        };
        let mut seq = 0;
        let mut valid_len = 0;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, raw) in lines.iter().enumerate() {
            let torn = i + 1 == lines.len() && !raw.ends_with('\n');
            let parsed: Result<LogLine, String> = serde_json::from_str::<LogLine>(raw.trim_end())
                .map_err(|e| e.to_string())
                .and_then(|l| if l.kind == KIND { Ok(l) } else { Err(format!("unknown event type {:?}", l.kind)) })
                .and_then(|l| {
                    if l.seq == seq + 1 {
                        Ok(l)
                    } else {
                        Err(format!("expected sequence number {}, found {}", seq + 1, l.seq))
                    }
                });
            match parsed {
                Ok(l) => {
                    seq = l.seq;
                    valid_len += raw.len();
                    if l.seq > snap_seq {
                        replay.push(l.event);
                    }
                }
                Err(_) if torn => {
                    log::warn!("discarding torn final line of {}", log_path.display());
                }
                Err(message) => {
                    return Err(StoreError::Corrupt {
                        path: log_path.display().to_string(),
                        line: i + 1,
                        message,
                    })
                }
            }
        }
        if snap_seq > seq {
            return Err(StoreError::Corrupt {
                path: snap_path.display().to_string(),
                line: 1,
                message: format!("snapshot covers event {snap_seq} but the log ends at {seq}"),
            });
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        if valid_len < text.len() {
            file.set_len(valid_len as u64).map_err(io_err(&log_path))?;
        }
        Ok((
            EventLog {
                dir: dir.to_path_buf(),
                file,
                seq,
                snapshot_every: snapshot_every.max(1),
            },
            replay,
        ))
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    /// Durably appends one event. Returns whether a snapshot is due once the
    /// event has been applied.
    pub fn append(&mut self, event: &LabelSubmitted) -> Result<bool, StoreError> {
        let line = LogLine {
            seq: self.seq + 1,
            kind: KIND.to_string(),
            event: event.clone(),
        };
        let mut bytes = serde_json::to_vec(&line).expect("event serializes");
        bytes.push(b'\n');
        let path = self.log_path();
        self.file.write_all(&bytes).map_err(io_err(&path))?;
        self.file.sync_data().map_err(io_err(&path))?;
        self.seq += 1;
        Ok(self.seq.is_multiple_of(self.snapshot_every))
    }

    pub fn snapshot(&self, state: &AdjudicationState) -> Result<(), StoreError> {
        let snap = Snapshot {
            seq: self.seq,
            submissions: state.submissions(),
        };
        let path = self.dir.join(SNAPSHOT_FILE);
        write_atomic(&path, &serde_json::to_vec(&snap).expect("snapshot serializes")).map_err(io_err(&path))
    }
}

/// Applies replayed events; identical repeats are harmless.
pub fn replay(state: &mut AdjudicationState, events: &[LabelSubmitted]) -> Result<(), StoreError> {
    for e in events {
        state.submit(&e.expert, &e.item_id, e.label)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::StateConfig;
    use labelcraft::annotation::{Annotation, AnnotationSet, Label};
    use labelcraft::corpus::{Message, Source};

    fn state() -> AdjudicationState {
        let mut anns = Vec::new();
        let mut msgs = Vec::new();
        for i in 0..6 {
            let id = format!("i{i}");
            for (w, l) in "AAADD".chars().enumerate() {
                anns.push(Annotation::crowd(&id, &format!("w{w}"), l.to_string().parse().unwrap()));
            }
            msgs.push(Message::new(id, "text", Source::Synthetic));
        }
        AdjudicationState::new(StateConfig::default(), &AnnotationSet::new(anns).unwrap(), &msgs).unwrap()
    }

    fn ev(expert: &str, item: &str, label: Label) -> LabelSubmitted {
        LabelSubmitted {
            expert: expert.into(),
            item_id: item.into(),
            label,
        }
    }

    fn record(log: &mut EventLog, s: &mut AdjudicationState, e: LabelSubmitted) {
        let due = log.append(&e).unwrap();
        s.submit(&e.expert, &e.item_id, e.label).unwrap();
        if due {
            log.snapshot(s).unwrap();
        }
    }

    #[test]
    fn reopen_replays_to_identical_state() {
        let tmp = tempfile::tempdir().unwrap();
        let mut live = state();
        let (mut log, pending) = EventLog::open(tmp.path(), 3).unwrap();
        assert!(pending.is_empty());
        for e in [
            ev("expert1", "i0", Label::A),
            ev("expert2", "i0", Label::A),
            ev("expert1", "i1", Label::B),
            ev("expert2", "i1", Label::D),
            ev("expert1", "i2", Label::C),
        ] {
            record(&mut log, &mut live, e);
        }
        assert!(tmp.path().join(SNAPSHOT_FILE).exists());
        drop(log);

        let (log, events) = EventLog::open(tmp.path(), 3).unwrap();
        assert_eq!(log.seq(), 5);
        assert_eq!(events.len(), 5, "three from the snapshot, two from the log tail");
        let mut replayed = state();
        replay(&mut replayed, &events).unwrap();
        assert_eq!(replayed, live);
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let tmp = tempfile::tempdir().unwrap();
        let mut live = state();
        let (mut log, _) = EventLog::open(tmp.path(), 100).unwrap();
        record(&mut log, &mut live, ev("expert1", "i0", Label::A));
        drop(log);
        let path = tmp.path().join(LOG_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"seq\":2,\"type\":\"label_sub");
        fs::write(&path, text).unwrap();

        let (mut log, events) = EventLog::open(tmp.path(), 100).unwrap();
        assert_eq!(events.len(), 1);
        let mut s = state();
        replay(&mut s, &events).unwrap();
        record(&mut log, &mut s, ev("expert2", "i0", Label::A));
        drop(log);
        let (_, events) = EventLog::open(tmp.path(), 100).unwrap();
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(
            tmp.path().join(LOG_FILE),
            "garbage\n{\"seq\":1,\"type\":\"label_submitted\",\"expert\":\"expert1\",\"item_id\":\"i0\",\"label\":\"A\"}\n",
        )
        .unwrap();
        match EventLog::open(tmp.path(), 10) {
            Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected corruption error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn sequence_gaps_are_corruption() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(
            tmp.path().join(LOG_FILE),
            "{\"seq\":2,\"type\":\"label_submitted\",\"expert\":\"expert1\",\"item_id\":\"i0\",\"label\":\"A\"}\n",
        )
        .unwrap();
        assert!(matches!(EventLog::open(tmp.path(), 10), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);
    }
}
