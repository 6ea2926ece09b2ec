use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use labelcraft::annotation::{self, AnnotationError, AnnotationSet, Label};
use labelcraft::corpus::{self, CorpusError};
use thiserror::Error;

use crate::state::{Admission, AdjudicationState, QueueItem, StateConfig, StateError, Stats, SubmitOutcome};
use crate::store::{self, EventLog, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Server(#[source] std::io::Error),
    #[error("cannot update annotations file {path}: {source}")]
    Persist {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where the service reads its inputs and keeps its log.
#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub corpus_path: PathBuf,
    pub annotations_path: PathBuf,
    pub state_dir: PathBuf,
    pub state: StateConfig,
    pub snapshot_every: u64,
}

struct Inner {
    state: AdjudicationState,
    log: Option<EventLog>,
}

/// Thread-safe front for the state machine. Every write holds one lock
/// across validation, the durable log append and the state update, so the
/// merge decision for an item is taken exactly once.
pub struct Service {
    inner: RwLock<Inner>,
    annotations_path: Option<PathBuf>,
}

impl Service {
    /// A service with no persistence.
    pub fn in_memory(state: AdjudicationState) -> Self {
        Service {
            inner: RwLock::new(Inner { state, log: None }),
            annotations_path: None,
        }
    }

    pub fn open(opts: &ServiceOptions) -> Result<Self, ServiceError> {
        let messages = corpus::read_corpus(&opts.corpus_path)?;
        let set = AnnotationSet::new(annotation::read_annotations(&opts.annotations_path)?)?;
        let mut state = AdjudicationState::new(opts.state.clone(), &set, &messages)?;
        let (log, events) = EventLog::open(&opts.state_dir, opts.snapshot_every)?;
        store::replay(&mut state, &events)?;
        log::info!(
            "adjudication queue: {} items, {} events replayed",
            state.queue_len(),
            events.len()
        );
        Ok(Service {
            inner: RwLock::new(Inner { state, log: Some(log) }),
            annotations_path: Some(opts.annotations_path.clone()),
        })
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn next_item(&self, expert: &str) -> Result<Option<QueueItem>, StateError> {
        self.read().state.next_item(expert)
    }

    pub fn submit(&self, expert: &str, item: &str, label: Label) -> Result<SubmitOutcome, ServiceError> {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        let inner = &mut *guard;
        match inner.state.check(expert, item, label)? {
            Admission::Duplicate(outcome) => Ok(outcome),
            Admission::New(event) => {
                // Log before applying: a failed append leaves the state as it was.
                let snapshot_due = match inner.log.as_mut() {
                    Some(log) => log.append(&event)?,
                    None => false,
                };
                let outcome = inner.state.apply(&event);
                if snapshot_due {
                    let log = inner.log.as_ref().expect("snapshot implies a log");
                    if let Err(e) = log.snapshot(&inner.state) {
                        // The log alone is enough to recover.
                        log::warn!("snapshot failed: {e}");
                    }
                }
                Ok(outcome)
            }
        }
    }

    pub fn stats(&self) -> Stats {
        self.read().state.stats()
    }

    /// Gold labels as CSV; with `include_dropped`, dropped items follow with
    /// an empty label and provenance `dropped`.
    pub fn export_csv(&self, include_dropped: bool) -> String {
        let guard = self.read();
        let mut out = annotation::gold_labels_csv(&guard.state.gold_labels());
        if include_dropped {
            for id in guard.state.dropped_items() {
                out.push_str(id);
                out.push_str(",,dropped\n");
            }
        }
        out
    }

    pub fn snapshot_state(&self) -> AdjudicationState {
        self.read().state.clone()
    }

    /// Appends expert labels recorded since startup to the annotations file,
    /// replacing it atomically. Leaves the file untouched when there are
    /// none. Returns the number of lines added.
    pub fn persist_annotations(&self) -> Result<usize, ServiceError> {
        let Some(path) = &self.annotations_path else {
            return Ok(0);
        };
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        let new = guard.state.new_expert_annotations();
        if new.is_empty() {
            return Ok(0);
        }
        let persist_err = |source| ServiceError::Persist {
            path: path.display().to_string(),
            source,
        };
        let mut text = fs::read_to_string(path).map_err(persist_err)?;
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        for a in &new {
            text.push_str(&a.to_json_line());
            text.push('\n');
        }
        store::write_atomic(Path::new(path), text.as_bytes()).map_err(persist_err)?;
        guard.state.mark_persisted();
        log::info!("appended {} expert annotations to {}", new.len(), path.display());
        Ok(new.len())
    }
}
