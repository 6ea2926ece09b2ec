//! In-memory adjudication state and the rules for applying a submission.
//!
//! Nothing here touches disk or the network. The state is a fold over
//! [`LabelSubmitted`] events, which is what makes log replay exact.

use std::collections::{BTreeMap, BTreeSet};

use labelcraft::annotation::{
    self, adjudicate, merge_expert, AgreementReport, AnnotationSet, GoldLabel, Label, LabelDistribution, Majority,
    MergeOutcome, Provenance, TiePolicy,
};
use labelcraft::corpus::Message;
use labelcraft::seeding;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateConfig {
    /// The two registered experts.
    pub experts: [String; 2],
    /// Whether queue items expose crowd vote counts to experts.
    pub show_crowd: bool,
    /// Serve the queue in a seeded random order instead of id order.
    pub queue_seed: Option<u64>,
    pub tie_policy: TiePolicy,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig {
            experts: ["expert1".to_string(), "expert2".to_string()],
            show_crowd: false,
            queue_seed: None,
            tie_policy: TiePolicy::Unresolved,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("unknown expert {0:?}")]
    UnknownExpert(String),
    #[error("item {0:?} is not in the adjudication queue")]
    UnknownItem(String),
    #[error("item {0:?} is already {1}")]
    AlreadyClosed(String, QueueStatus),
    #[error("expert {expert:?} already labeled item {item:?} as {existing}")]
    ConflictingLabel { expert: String, item: String, existing: Label },
    #[error("experts must be two distinct ids, got {0:?}")]
    BadExperts(Vec<String>),
    #[error("annotations name expert {0:?}, who is not registered")]
    UnregisteredExpert(String),
    #[error("annotated item {0:?} has no message text")]
    MissingText(String),
    #[error("{0}")]
    Annotation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueStatus {
    Pending,
    HalfLabeled,
    Resolved,
    Dropped,
}

impl QueueStatus {
    pub fn is_open(self) -> bool {
        matches!(self, QueueStatus::Pending | QueueStatus::HalfLabeled)
    }
}

impl std::fmt::Display for QueueStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QueueStatus::Pending => "pending",
            QueueStatus::HalfLabeled => "half_labeled",
            QueueStatus::Resolved => "resolved",
            QueueStatus::Dropped => "dropped",
        })
    }
}

/// One accepted expert label; the only event type in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSubmitted {
    pub expert: String,
    pub item_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub item_id: String,
    pub anon_text: String,
    pub distribution: LabelDistribution,
    pub majority: Majority,
    pub labels: BTreeMap<String, Label>,
    pub status: QueueStatus,
    pub gold: Option<GoldLabel>,
}

/// What an expert is shown. Other experts' labels are never included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueItem {
    pub item_id: String,
    pub anon_text: String,
    pub status: QueueStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crowd_distribution: Option<BTreeMap<Label, u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SubmitOutcome {
    Recorded { item_id: String },
    Resolved { gold: GoldLabel },
    ConflictResolved { gold: GoldLabel },
    Dropped { item_id: String },
}

/// Result of [`AdjudicationState::check`]: either a new event to log and
/// apply, or a repeat of something already stored.
#[derive(Debug, Clone, PartialEq)]
pub enum Admission {
    New(LabelSubmitted),
    Duplicate(SubmitOutcome),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjudicationState {
    config: StateConfig,
    order: Vec<String>,
    entries: BTreeMap<String, QueueEntry>,
    /// Crowd-unanimous gold labels, never queued.
    unanimous: Vec<GoldLabel>,
    /// Expert labels present in the annotation file at startup.
    preexisting: BTreeSet<(String, String)>,
}

impl AdjudicationState {
    /// Builds the queue from crowd annotations and replays any expert labels
    /// already in the file.
    pub fn new(config: StateConfig, set: &AnnotationSet, messages: &[Message]) -> Result<Self, StateError> {
        if config.experts[0] == config.experts[1] || config.experts.iter().any(|e| e.trim().is_empty()) {
            return Err(StateError::BadExperts(config.experts.to_vec()));
        }
        if let Some(e) = set.experts().iter().find(|e| !config.experts.contains(e)) {
            return Err(StateError::UnregisteredExpert(e.clone()));
        }
        let text: BTreeMap<&str, &str> = messages.iter().map(|m| (m.id.as_str(), m.anon_text.as_str())).collect();
        // Expert labels are applied below as events, so adjudicate crowd only.
        let crowd_only = adjudicate(set, config.tie_policy).map_err(|e| StateError::Annotation(e.to_string()))?;

        let mut entries = BTreeMap::new();
        let mut unanimous = Vec::new();
        for o in crowd_only.items {
            if o.unanimous.is_some() {
                unanimous.extend(o.gold);
                continue;
            }
            let anon_text = text.get(o.item_id.as_str()).ok_or_else(|| StateError::MissingText(o.item_id.clone()))?;
            entries.insert(
                o.item_id.clone(),
                QueueEntry {
                    item_id: o.item_id,
                    anon_text: anon_text.to_string(),
                    distribution: o.distribution,
                    majority: o.majority,
                    labels: BTreeMap::new(),
                    status: QueueStatus::Pending,
                    gold: None,
                },
            );
        }
        let mut order: Vec<String> = entries.keys().cloned().collect();
        if let Some(seed) = config.queue_seed {
            order.shuffle(&mut seeding::substream(seed, "queue"));
        }
        let mut state = AdjudicationState {
            config,
            order,
            entries,
            unanimous,
            preexisting: BTreeSet::new(),
        };
        let ids: Vec<String> = state.entries.keys().cloned().collect();
        for item in ids {
            for (expert, label) in set.expert_labels(&item) {
                state.submit(&expert, &item, label)?;
                state.preexisting.insert((expert, item.clone()));
            }
        }
        Ok(state)
    }

    pub fn config(&self) -> &StateConfig {
        &self.config
    }

    pub fn entry(&self, item: &str) -> Option<&QueueEntry> {
        self.entries.get(item)
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.values()
    }

    pub fn queue_len(&self) -> usize {
        self.entries.len()
    }

    fn expert_slot(&self, expert: &str) -> Result<usize, StateError> {
        self.config
            .experts
            .iter()
            .position(|e| e == expert)
            .ok_or_else(|| StateError::UnknownExpert(expert.to_string()))
    }

    /// First open item in queue order that `expert` has not labeled.
    pub fn next_item(&self, expert: &str) -> Result<Option<QueueItem>, StateError> {
        self.expert_slot(expert)?;
        Ok(self
            .order
            .iter()
            .map(|id| &self.entries[id])
            .find(|e| e.status.is_open() && !e.labels.contains_key(expert))
            .map(|e| QueueItem {
                item_id: e.item_id.clone(),
                anon_text: e.anon_text.clone(),
                status: e.status,
                crowd_distribution: self
                    .config
                    .show_crowd
                    .then(|| Label::ALL.iter().map(|&l| (l, e.distribution.count(l))).collect()),
            }))
    }

    fn outcome_of(entry: &QueueEntry) -> SubmitOutcome {
        match (entry.status, &entry.gold) {
            (QueueStatus::Resolved, Some(g)) if g.provenance == Provenance::R2U => SubmitOutcome::Resolved { gold: g.clone() },
            (QueueStatus::Resolved, Some(g)) => SubmitOutcome::ConflictResolved { gold: g.clone() },
            (QueueStatus::Dropped, _) => SubmitOutcome::Dropped {
                item_id: entry.item_id.clone(),
            },
            _ => SubmitOutcome::Recorded {
                item_id: entry.item_id.clone(),
            },
        }
    }

    /// Validates a submission without changing anything.
    pub fn check(&self, expert: &str, item: &str, label: Label) -> Result<Admission, StateError> {
        self.expert_slot(expert)?;
        let entry = self.entries.get(item).ok_or_else(|| StateError::UnknownItem(item.to_string()))?;
        match entry.labels.get(expert) {
            Some(&existing) if existing == label => return Ok(Admission::Duplicate(Self::outcome_of(entry))),
            Some(&existing) if entry.status.is_open() => {
                return Err(StateError::ConflictingLabel {
                    expert: expert.to_string(),
                    item: item.to_string(),
                    existing,
                })
            }
            _ => {}
        }
        if !entry.status.is_open() {
            return Err(StateError::AlreadyClosed(item.to_string(), entry.status));
        }
        Ok(Admission::New(LabelSubmitted {
            expert: expert.to_string(),
            item_id: item.to_string(),
            label,
        }))
    }

    /// Applies an event that [`check`](Self::check) admitted as new.
    pub fn apply(&mut self, event: &LabelSubmitted) -> SubmitOutcome {
        let [e1, e2] = self.config.experts.clone();
        let policy = self.config.tie_policy;
        let entry = self.entries.get_mut(&event.item_id).expect("event checked against the queue");
        entry.labels.insert(event.expert.clone(), event.label);
        match (entry.labels.get(&e1), entry.labels.get(&e2)) {
            (Some(&l1), Some(&l2)) => {
                match merge_expert(&entry.distribution, l1, l2, policy).expect("queued items are not unanimous") {
                    MergeOutcome::Gold(g) => {
                        entry.status = QueueStatus::Resolved;
                        entry.gold = Some(g);
                    }
                    MergeOutcome::Dropped => entry.status = QueueStatus::Dropped,
                }
            }
            _ => entry.status = QueueStatus::HalfLabeled,
        }
        Self::outcome_of(entry)
    }

    /// `check` then `apply`.
    pub fn submit(&mut self, expert: &str, item: &str, label: Label) -> Result<SubmitOutcome, StateError> {
        match self.check(expert, item, label)? {
            Admission::New(event) => Ok(self.apply(&event)),
            Admission::Duplicate(outcome) => Ok(outcome),
        }
    }

    pub fn count(&self, status: QueueStatus) -> usize {
        self.entries.values().filter(|e| e.status == status).count()
    }

    /// Agreement over items both experts have labeled. `None` until at least
    /// two such items exist.
    pub fn agreement(&self) -> Option<AgreementReport> {
        let [e1, e2] = &self.config.experts;
        let mut r1 = BTreeMap::new();
        let mut r2 = BTreeMap::new();
        for e in self.entries.values() {
            if let (Some(&a), Some(&b)) = (e.labels.get(e1), e.labels.get(e2)) {
                r1.insert(e.item_id.clone(), a);
                r2.insert(e.item_id.clone(), b);
            }
        }
        if r1.len() < 2 {
            return None;
        }
        annotation::cohen_kappa(&r1, &r2).ok()
    }

    pub fn stats(&self) -> Stats {
        let agreement = self.agreement();
        let kappa = agreement.as_ref().filter(|a| !a.degenerate()).map(|a| a.kappa);
        let mut gold_distribution: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
        let mut by_provenance: BTreeMap<Provenance, usize> = BTreeMap::new();
        for g in self.entries.values().filter_map(|e| e.gold.as_ref()) {
            *gold_distribution.get_mut(&g.label).unwrap() += 1;
            *by_provenance.entry(g.provenance).or_default() += 1;
        }
        let per_expert = self
            .config
            .experts
            .iter()
            .map(|x| (x.clone(), self.entries.values().filter(|e| e.labels.contains_key(x)).count()))
            .collect();
        let progress = Progress {
            total: self.queue_len(),
            pending: self.count(QueueStatus::Pending),
            half_labeled: self.count(QueueStatus::HalfLabeled),
            resolved: self.count(QueueStatus::Resolved),
            dropped: self.count(QueueStatus::Dropped),
        };
        Stats {
            kappa,
            doubly_labeled: agreement.as_ref().map_or_else(|| self.doubly_labeled(), |a| a.items as usize),
            percent_agreement: agreement.as_ref().map(|a| a.percent_unanimous),
            contingency: agreement.map(|a| a.contingency),
            progress,
            gold_distribution,
            by_provenance,
            per_expert,
            crowd_unanimous: self.unanimous.len(),
        }
    }

    fn doubly_labeled(&self) -> usize {
        self.entries.values().filter(|e| e.labels.len() == 2).count()
    }

    /// Gold labels: crowd-unanimous items plus every resolved queue item, in
    /// item-id order.
    pub fn gold_labels(&self) -> Vec<GoldLabel> {
        let mut all: Vec<GoldLabel> = self
            .unanimous
            .iter()
            .cloned()
            .chain(self.entries.values().filter_map(|e| e.gold.clone()))
            .collect();
        all.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        all
    }

    pub fn dropped_items(&self) -> impl Iterator<Item = &str> {
        self.entries
            .values()
            .filter(|e| e.status == QueueStatus::Dropped)
            .map(|e| e.item_id.as_str())
    }

    /// Expert labels stored since startup, as annotation records in item then
    /// expert order.
    pub fn new_expert_annotations(&self) -> Vec<annotation::Annotation> {
        let mut out = Vec::new();
        for e in self.entries.values() {
            for (expert, &label) in &e.labels {
                if !self.preexisting.contains(&(expert.clone(), e.item_id.clone())) {
                    out.push(annotation::Annotation::expert(&e.item_id, expert, label));
                }
            }
        }
        out
    }

    /// Marks every stored label as already written to the annotation file.
    pub fn mark_persisted(&mut self) {
        for e in self.entries.values() {
            for expert in e.labels.keys() {
                self.preexisting.insert((expert.clone(), e.item_id.clone()));
            }
        }
    }

    /// Every stored expert label in item then expert order.
    pub fn submissions(&self) -> Vec<LabelSubmitted> {
        self.entries
            .values()
            .flat_map(|e| {
                e.labels.iter().map(|(expert, &label)| LabelSubmitted {
                    expert: expert.clone(),
                    item_id: e.item_id.clone(),
                    label,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub total: usize,
    pub pending: usize,
    pub half_labeled: usize,
    pub resolved: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    /// `None` with fewer than two doubly-labeled items or when chance
    /// agreement is 1.
    pub kappa: Option<f64>,
    pub doubly_labeled: usize,
    pub percent_agreement: Option<f64>,
    pub contingency: Option<[[u64; 4]; 4]>,
    pub progress: Progress,
    pub gold_distribution: BTreeMap<Label, usize>,
    pub by_provenance: BTreeMap<Provenance, usize>,
    pub per_expert: BTreeMap<String, usize>,
    pub crowd_unanimous: usize,
}
