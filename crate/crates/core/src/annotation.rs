//! Multi-annotator label ingestion, gold-label strategies and agreement.
//!
//! Crowd labels are aggregated per item. Items the crowd labels unanimously
//! keep that label (`R1U`); every other item goes to two experts, whose
//! shared label wins (`R2U`). When the experts disagree the crowd plurality
//! is used instead (`R2S`), and when that plurality is tied too the item is
//! dropped. Five dataset variants are cut from these outcomes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack when comparing trust-weighted masses for ties.
const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("annotation line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no annotations given")]
    Empty,
    #[error("annotations mix item ids {0:?} and {1:?}")]
    MixedItems(String, String),
    #[error("duplicate annotation by {annotator:?} for item {item:?} in the {round} round")]
    Duplicate { item: String, annotator: String, round: Round },
    #[error("trust must lie in (0, 1], got {trust} for item {item:?}")]
    BadTrust { item: String, trust: f64 },
    #[error("expert annotations must carry trust 1.0 (item {0:?})")]
    ExpertTrust(String),
    #[error("at most two experts are supported, found {0:?}")]
    TooManyExperts(Vec<String>),
    #[error("item {0:?} has expert labels but no crowd labels")]
    NoCrowdLabels(String),
    #[error("item {0:?} was labeled unanimously by the crowd and is not adjudicated")]
    UnanimousItem(String),
    #[error("raters labeled different item sets")]
    ItemSetMismatch,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("unknown dataset variant {0:?}")]
    UnknownVariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
    C,
    D,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::A, Label::B, Label::C, Label::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Label {
        Label::ALL[i]
    }

    /// Category name shown to annotators.
    pub fn title(self) -> &'static str {
        match self {
            Label::A => "Suicidal thoughts",
            Label::B => "Supportive messages or helpful information",
            Label::C => "Reaction to suicide news/movie/music",
            Label::D => "Other",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::A => "A",
            Label::B => "B",
            Label::C => "C",
            Label::D => "D",
        })
    }
}

impl FromStr for Label {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Label::A),
            "B" | "b" => Ok(Label::B),
            "C" | "c" => Ok(Label::C),
            "D" | "d" => Ok(Label::D),
            other => Err(AnnotationError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Round {
    Crowd,
    Expert,
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Round::Crowd => "crowd",
            Round::Expert => "expert",
        })
    }
}

fn default_trust() -> f64 {
    1.0
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub item_id: String,
    pub annotator_id: String,
    pub label: Label,
    pub round: Round,
    #[serde(default = "default_trust")]
    pub trust: f64,
}

impl Annotation {
    pub fn crowd(item: &str, annotator: &str, label: Label) -> Self {
        Annotation {
            item_id: item.to_string(),
            annotator_id: annotator.to_string(),
            label,
            round: Round::Crowd,
            trust: 1.0,
        }
    }

    pub fn expert(item: &str, annotator: &str, label: Label) -> Self {
        Annotation {
            round: Round::Expert,
            ..Annotation::crowd(item, annotator, label)
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("annotation serializes")
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, AnnotationError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(line).map_err(|e| AnnotationError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !(a.trust > 0.0 && a.trust <= 1.0) {
            return Err(AnnotationError::Parse {
                line: idx + 1,
                message: format!("trust {} outside (0, 1]", a.trust),
            });
        }
        out.push(a);
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>, AnnotationError> {
    let file = fs::File::open(path).map_err(|source| AnnotationError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| AnnotationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    parse_annotations(&text)
}

/// Per-item label counts and trust-weighted masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub item_id: String,
    pub counts: [u32; 4],
    pub weighted: [f64; 4],
}

impl LabelDistribution {
    pub fn count(&self, label: Label) -> u32 {
        self.counts[label.index()]
    }

    pub fn weight(&self, label: Label) -> f64 {
        self.weighted[label.index()]
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Labels as a compact string such as `AAADD`.
    pub fn pattern(&self) -> String {
        Label::ALL
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l.to_string(), self.count(l) as usize))
            .collect()
    }
}

pub fn distribution(annotations: &[Annotation]) -> Result<LabelDistribution, AnnotationError> {
    let first = annotations.first().ok_or(AnnotationError::Empty)?;
    let mut dist = LabelDistribution {
        item_id: first.item_id.clone(),
        counts: [0; 4],
        weighted: [0.0; 4],
    };
    for a in annotations {
        if a.item_id != first.item_id {
            return Err(AnnotationError::MixedItems(first.item_id.clone(), a.item_id.clone()));
        }
        dist.counts[a.label.index()] += 1;
        dist.weighted[a.label.index()] += a.trust;
    }
    Ok(dist)
}

/// Result of plurality voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Majority {
    Label(Label),
    Unresolved,
}

impl Majority {
    pub fn label(self) -> Option<Label> {
        match self {
            Majority::Label(l) => Some(l),
            Majority::Unresolved => None,
        }
    }
}

/// How a tie for the top weighted mass is settled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties stay unresolved and the item is dropped where a label is needed.
    #[default]
    Unresolved,
    /// The alphabetically first tied label wins.
    LowestLabel,
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unresolved" => Ok(TiePolicy::Unresolved),
            "lowest_label" | "lowest-label" => Ok(TiePolicy::LowestLabel),
            other => Err(format!("unknown tie policy {other:?}")),
        }
    }
}

pub fn majority_label(dist: &LabelDistribution) -> Majority {
    majority_label_with(dist, TiePolicy::Unresolved)
}

pub fn majority_label_with(dist: &LabelDistribution, policy: TiePolicy) -> Majority {
    let best = dist.weighted.iter().cloned().fold(0.0_f64, f64::max);
    if best <= 0.0 {
        return Majority::Unresolved;
    }
    let tied: Vec<Label> = Label::ALL
        .iter()
        .copied()
        .filter(|&l| dist.weight(l) >= best - TIE_EPS * best)
        .collect();
    match (tied.as_slice(), policy) {
        ([only], _) => Majority::Label(*only),
        ([first, ..], TiePolicy::LowestLabel) => Majority::Label(*first),
        _ => Majority::Unresolved,
    }
}

pub fn unanimous_label(dist: &LabelDistribution) -> Option<Label> {
    let mut present = Label::ALL.iter().copied().filter(|&l| dist.count(l) > 0);
    match (present.next(), present.next()) {
        (Some(l), None) => Some(l),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    R1S,
    R1U,
    R2U,
    R2S,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R1S" => Ok(Provenance::R1S),
            "R1U" => Ok(Provenance::R1U),
            "R2U" => Ok(Provenance::R2U),
            "R2S" => Ok(Provenance::R2S),
            other => Err(format!("unknown provenance {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub item_id: String,
    pub label: Label,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MergeOutcome {
    Gold(GoldLabel),
    Dropped,
}

/// Combines two expert labels for an item the crowd did not agree on.
pub fn merge_expert(
    dist: &LabelDistribution,
    expert1: Label,
    expert2: Label,
    policy: TiePolicy,
) -> Result<MergeOutcome, AnnotationError> {
    if unanimous_label(dist).is_some() {
        return Err(AnnotationError::UnanimousItem(dist.item_id.clone()));
    }
    if expert1 == expert2 {
        return Ok(MergeOutcome::Gold(GoldLabel {
            item_id: dist.item_id.clone(),
            label: expert1,
            provenance: Provenance::R2U,
        }));
    }
    Ok(match majority_label_with(dist, policy) {
        Majority::Label(label) => MergeOutcome::Gold(GoldLabel {
            item_id: dist.item_id.clone(),
            label,
            provenance: Provenance::R2S,
        }),
        Majority::Unresolved => MergeOutcome::Dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinaryClass {
    Positive,
    Negative,
}

impl BinaryClass {
    /// +1 for the positive class, -1 otherwise.
    pub fn sign(self) -> f64 {
        match self {
            BinaryClass::Positive => 1.0,
            BinaryClass::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            BinaryClass::Positive => BinaryClass::Negative,
            BinaryClass::Negative => BinaryClass::Positive,
        }
    }
}

/// Suicidal thoughts against everything else.
pub fn binarize(label: Label) -> BinaryClass {
    match label {
        Label::A => BinaryClass::Positive,
        Label::B | Label::C | Label::D => BinaryClass::Negative,
    }
}

/// The five gold-label strategies; each trains one model `C1`..`C5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantName {
    #[serde(rename = "V_R1S")]
    R1S,
    #[serde(rename = "V_R1U")]
    R1U,
    #[serde(rename = "V_R2U")]
    R2U,
    #[serde(rename = "V_R1U_R2U")]
    R1uR2u,
    #[serde(rename = "V_R1U_R2U_R2S")]
    R1uR2uR2s,
}

impl VariantName {
    pub const ALL: [VariantName; 5] = [
        VariantName::R1S,
        VariantName::R1U,
        VariantName::R2U,
        VariantName::R1uR2u,
        VariantName::R1uR2uR2s,
    ];

    pub fn model(self) -> &'static str {
        match self {
            VariantName::R1S => "C1",
            VariantName::R1U => "C2",
            VariantName::R2U => "C3",
            VariantName::R1uR2u => "C4",
            VariantName::R1uR2uR2s => "C5",
        }
    }

    /// Short form such as `R1U+R2U`.
    pub fn short(self) -> &'static str {
        match self {
            VariantName::R1S => "R1S",
            VariantName::R1U => "R1U",
            VariantName::R2U => "R2U",
            VariantName::R1uR2u => "R1U+R2U",
            VariantName::R1uR2uR2s => "R1U+R2U+R2S",
        }
    }

    /// Directory-safe identifier such as `V_R1U_R2U`.
    pub fn id(self) -> &'static str {
        match self {
            VariantName::R1S => "V_R1S",
            VariantName::R1U => "V_R1U",
            VariantName::R2U => "V_R2U",
            VariantName::R1uR2u => "V_R1U_R2U",
            VariantName::R1uR2uR2s => "V_R1U_R2U_R2S",
        }
    }

    fn admits(self, provenance: Provenance) -> bool {
        use Provenance::*;
        match self {
            VariantName::R1S => provenance == R1S,
            VariantName::R1U => provenance == R1U,
            VariantName::R2U => provenance == R2U,
            VariantName::R1uR2u => matches!(provenance, R1U | R2U),
            VariantName::R1uR2uR2s => matches!(provenance, R1U | R2U | R2S),
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for VariantName {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_uppercase().replace('+', "_");
        let key = key.strip_prefix("V_").unwrap_or(&key);
        VariantName::ALL
            .iter()
            .copied()
            .find(|v| v.id()[2..] == *key || v.model() == key)
            .ok_or_else(|| AnnotationError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetVariant {
    pub name: VariantName,
    pub items: Vec<GoldLabel>,
}

impl DatasetVariant {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn label_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for g in &self.items {
            counts[g.label.index()] += 1;
        }
        counts
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.items.iter().filter(|g| binarize(g.label) == BinaryClass::Positive).count();
        (pos, self.items.len() - pos)
    }
}

/// Gold-label CSV with header `item_id,label,provenance`.
pub fn gold_labels_csv(items: &[GoldLabel]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item_id", "label", "provenance"]).unwrap();
    for g in items {
        w.write_record([g.item_id.as_str(), &g.label.to_string(), &g.provenance.to_string()])
            .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Annotations validated and grouped by item.
#[derive(Debug, Clone, Default)]
pub struct AnnotationSet {
    crowd: BTreeMap<String, Vec<Annotation>>,
    expert: BTreeMap<String, Vec<Annotation>>,
    experts: Vec<String>,
}

impl AnnotationSet {
    pub fn new(annotations: Vec<Annotation>) -> Result<Self, AnnotationError> {
        let mut seen = HashSet::new();
        let mut set = AnnotationSet::default();
        let mut expert_ids = BTreeSet::new();
        for a in annotations {
            if !(a.trust > 0.0 && a.trust <= 1.0) {
                return Err(AnnotationError::BadTrust {
                    item: a.item_id,
                    trust: a.trust,
                });
            }
            if !seen.insert((a.item_id.clone(), a.annotator_id.clone(), a.round)) {
                return Err(AnnotationError::Duplicate {
                    item: a.item_id,
                    annotator: a.annotator_id,
                    round: a.round,
                });
            }
            match a.round {
                Round::Crowd => set.crowd.entry(a.item_id.clone()).or_default().push(a),
                Round::Expert => {
                    if a.trust != 1.0 {
                        return Err(AnnotationError::ExpertTrust(a.item_id));
                    }
                    expert_ids.insert(a.annotator_id.clone());
                    set.expert.entry(a.item_id.clone()).or_default().push(a);
                }
            }
        }
        if expert_ids.len() > 2 {
            return Err(AnnotationError::TooManyExperts(expert_ids.into_iter().collect()));
        }
        if let Some(item) = set.expert.keys().find(|k| !set.crowd.contains_key(*k)) {
            return Err(AnnotationError::NoCrowdLabels(item.clone()));
        }
        set.experts = expert_ids.into_iter().collect();
        Ok(set)
    }

    /// Item ids with crowd labels, sorted.
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.crowd.keys().map(String::as_str)
    }

    pub fn all_item_ids(&self) -> impl Iterator<Item = &str> {
        self.crowd.keys().chain(self.expert.keys()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.crowd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crowd.is_empty()
    }

    /// Registered expert ids in sorted order.
    pub fn experts(&self) -> &[String] {
        &self.experts
    }

    pub fn crowd_distribution(&self, item: &str) -> Option<LabelDistribution> {
        self.crowd.get(item).map(|a| distribution(a).expect("grouped by item"))
    }

    pub fn expert_labels(&self, item: &str) -> BTreeMap<String, Label> {
        self.expert
            .get(item)
            .map(|v| v.iter().map(|a| (a.annotator_id.clone(), a.label)).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    /// Crowd agreed; not sent to experts.
    CrowdUnanimous,
    /// Experts agreed.
    ExpertAgreed,
    /// Experts disagreed; the crowd plurality was used.
    CrowdFallback,
    /// Experts disagreed and the crowd plurality was tied.
    Dropped,
    /// Waiting for one or both expert labels.
    Pending,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub distribution: LabelDistribution,
    pub majority: Majority,
    pub unanimous: Option<Label>,
    pub experts: Option<(Label, Label)>,
    pub status: ItemStatus,
    pub gold: Option<GoldLabel>,
}

/// Outcome of both rounds for every annotated item, in item-id order.
#[derive(Debug, Clone)]
pub struct Adjudication {
    pub items: Vec<ItemOutcome>,
    pub experts: Vec<String>,
    pub policy: TiePolicy,
}

pub fn adjudicate(set: &AnnotationSet, policy: TiePolicy) -> Result<Adjudication, AnnotationError> {
    let mut items = Vec::with_capacity(set.len());
    for item in set.items() {
        let dist = set.crowd_distribution(item).expect("item has crowd labels");
        let unanimous = unanimous_label(&dist);
        let majority = majority_label_with(&dist, policy);
        let by_expert = set.expert_labels(item);
        let mut outcome = ItemOutcome {
            item_id: item.to_string(),
            distribution: dist,
            majority,
            unanimous,
            experts: None,
            status: ItemStatus::Pending,
            gold: None,
        };
        if let Some(label) = unanimous {
            if !by_expert.is_empty() {
                return Err(AnnotationError::UnanimousItem(item.to_string()));
            }
            outcome.status = ItemStatus::CrowdUnanimous;
            outcome.gold = Some(GoldLabel {
                item_id: item.to_string(),
                label,
                provenance: Provenance::R1U,
            });
        } else if by_expert.len() == 2 {
            // BTreeMap order: the expert with the smaller id comes first.
            let mut labels = by_expert.values().copied();
            let (e1, e2) = (labels.next().unwrap(), labels.next().unwrap());
            outcome.experts = Some((e1, e2));
            match merge_expert(&outcome.distribution, e1, e2, policy)? {
                MergeOutcome::Gold(g) => {
                    outcome.status = if g.provenance == Provenance::R2U {
                        ItemStatus::ExpertAgreed
                    } else {
                        ItemStatus::CrowdFallback
                    };
                    outcome.gold = Some(g);
                }
                MergeOutcome::Dropped => outcome.status = ItemStatus::Dropped,
            }
        }
        items.push(outcome);
    }
    Ok(Adjudication {
        items,
        experts: set.experts().to_vec(),
        policy,
    })
}

impl Adjudication {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, status: ItemStatus) -> usize {
        self.items.iter().filter(|i| i.status == status).count()
    }

    /// Items the crowd did not label unanimously.
    pub fn round2_queue(&self) -> impl Iterator<Item = &ItemOutcome> {
        self.items.iter().filter(|i| i.unanimous.is_none())
    }

    pub fn gold_labels(&self) -> Vec<GoldLabel> {
        self.items.iter().filter_map(|i| i.gold.clone()).collect()
    }

    pub fn dropped(&self) -> impl Iterator<Item = &ItemOutcome> {
        self.items.iter().filter(|i| i.status == ItemStatus::Dropped)
    }

    /// Percentage of items with a unanimous crowd label.
    pub fn crowd_unanimity_percent(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        100.0 * self.count(ItemStatus::CrowdUnanimous) as f64 / self.items.len() as f64
    }

    /// Agreement between the two experts over every doubly-labeled item.
    pub fn expert_agreement(&self) -> Option<AgreementReport> {
        let mut r1 = BTreeMap::new();
        let mut r2 = BTreeMap::new();
        for i in &self.items {
            if let Some((a, b)) = i.experts {
                r1.insert(i.item_id.clone(), a);
                r2.insert(i.item_id.clone(), b);
            }
        }
        cohen_kappa(&r1, &r2).ok()
    }
}

pub fn build_variant(name: VariantName, adjudication: &Adjudication) -> DatasetVariant {
    let items = adjudication
        .items
        .iter()
        .filter_map(|i| {
            if name == VariantName::R1S {
                i.majority.label().map(|label| GoldLabel {
                    item_id: i.item_id.clone(),
                    label,
                    provenance: Provenance::R1S,
                })
            } else {
                i.gold.clone().filter(|g| name.admits(g.provenance))
            }
        })
        .collect();
    DatasetVariant { name, items }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub kappa: f64,
    /// Share of items on which both raters agree, in percent.
    pub percent_unanimous: f64,
    /// `contingency[i][j]`: items rater 1 labeled `i` and rater 2 labeled `j`.
    pub contingency: [[u64; 4]; 4],
    pub items: u64,
}

impl AgreementReport {
    /// Expected chance agreement is 1 (both raters constant on one label).
    pub fn degenerate(&self) -> bool {
        let (rows, cols) = self.marginals();
        let s: u128 = rows.iter().zip(cols).map(|(&r, c)| r as u128 * c as u128).sum();
        s == (self.items as u128) * (self.items as u128)
    }

    pub fn marginals(&self) -> ([u64; 4], [u64; 4]) {
        let mut rows = [0; 4];
        let mut cols = [0; 4];
        for (i, row) in self.contingency.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                rows[i] += c;
                cols[j] += c;
            }
        }
        (rows, cols)
    }
}

/// Cohen's kappa between two raters over the same items.
///
/// Computed as `(n*agree - S) / (n^2 - S)` with `S` the sum of marginal
/// products, which equals `(po - pe) / (1 - pe)` without intermediate
/// rounding. When `pe = 1` kappa is 1 for full agreement and 0 otherwise.
pub fn cohen_kappa(
    rater1: &BTreeMap<String, Label>,
    rater2: &BTreeMap<String, Label>,
) -> Result<AgreementReport, AnnotationError> {
    if rater1.is_empty() || rater1.len() != rater2.len() || !rater1.keys().eq(rater2.keys()) {
        return Err(AnnotationError::ItemSetMismatch);
    }
    let mut contingency = [[0u64; 4]; 4];
    for (a, b) in rater1.values().zip(rater2.values()) {
        contingency[a.index()][b.index()] += 1;
    }
    Ok(kappa_from_contingency(contingency))
}

pub fn kappa_from_contingency(contingency: [[u64; 4]; 4]) -> AgreementReport {
    let n: u64 = contingency.iter().flatten().sum();
    let agree: u64 = (0..4).map(|i| contingency[i][i]).sum();
    let mut report = AgreementReport {
        kappa: 0.0,
        percent_unanimous: if n == 0 { 0.0 } else { 100.0 * agree as f64 / n as f64 },
        contingency,
        items: n,
    };
    let (rows, cols) = report.marginals();
    let s: i128 = rows.iter().zip(cols).map(|(&r, c)| r as i128 * c as i128).sum();
    let n = n as i128;
    let denom = n * n - s;
    report.kappa = if denom == 0 {
        if agree as i128 == n {
            1.0
        } else {
            0.0
        }
    } else {
        (n * agree as i128 - s) as f64 / denom as f64
    };
    report
}
