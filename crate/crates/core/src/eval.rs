//! Metrics, stratified k-fold cross-validation, class-weight grid search and
//! learning curves.
//!
//! Every fold refits the vocabulary on its own training split, so n-grams that
//! only occur in a test fold never become features for that fold. Metrics that
//! are undefined on a fold (ROC AUC and average precision when a class is
//! absent) are `None` and left out of the aggregates.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::BinaryClass;
use crate::seeding;
use crate::svm::{self, LinearModel, SvmError, TrainConfig};
use crate::textprep::{self, TextError, TokenStream, Vocabulary};

/// Equality slack when comparing mean AUCs in the grid search.
const AUC_TIE_EPS: f64 = 1e-12;

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions and truth differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("k must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("k = {k} exceeds the number of items ({items})")]
    TooManyFolds { k: usize, items: usize },
    #[error("class {0:?} has no members")]
    MissingClass(BinaryClass),
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("fold plan does not cover the dataset: {0}")]
    PlanMismatch(String),
    #[error("class-weight grid is empty")]
    EmptyGrid,
    #[error("learning-curve fractions must be increasing and in (0, 1]: {0:?}")]
    BadFractions(Vec<f64>),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(pred: &[BinaryClass], truth: &[BinaryClass]) -> Result<ConfusionMatrix, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut m = ConfusionMatrix::default();
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (BinaryClass::Positive, BinaryClass::Positive) => m.tp += 1,
            (BinaryClass::Positive, BinaryClass::Negative) => m.fp += 1,
            (BinaryClass::Negative, BinaryClass::Negative) => m.tn += 1,
            (BinaryClass::Negative, BinaryClass::Positive) => m.fn_ += 1,
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    F1Weighted,
    RocAuc,
    AveragePrecision,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::F1Weighted,
        Metric::RocAuc,
        Metric::AveragePrecision,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::F1Weighted => "f1_weighted",
            Metric::RocAuc => "roc_auc",
            Metric::AveragePrecision => "average_precision",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Positive-class metrics at a threshold plus threshold-free ranking metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_weighted: f64,
    /// `None` when either class is absent.
    pub roc_auc: Option<f64>,
    /// `None` when either class is absent.
    pub average_precision: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => Some(self.accuracy),
            Metric::Precision => Some(self.precision),
            Metric::Recall => Some(self.recall),
            Metric::F1 => Some(self.f1),
            Metric::F1Weighted => Some(self.f1_weighted),
            Metric::RocAuc => self.roc_auc,
            Metric::AveragePrecision => self.average_precision,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(scores: &[f64], truth: &[BinaryClass], threshold: f64) -> Result<MetricsReport, EvalError> {
    let pred: Vec<BinaryClass> = scores
        .iter()
        .map(|&s| if s > threshold { BinaryClass::Positive } else { BinaryClass::Negative })
        .collect();
    let cm = confusion(&pred, truth)?;
    let n = cm.total();
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = f1_score(precision, recall);
    let f1_neg = f1_score(ratio(cm.tn, cm.tn + cm.fn_), ratio(cm.tn, cm.tn + cm.fp));
    let (n_pos, n_neg) = (cm.tp + cm.fn_, cm.tn + cm.fp);
    Ok(MetricsReport {
        accuracy: ratio(cm.tp + cm.tn, n),
        precision,
        recall,
        f1,
        f1_weighted: (n_pos as f64 * f1 + n_neg as f64 * f1_neg) / n as f64,
        roc_auc: roc_auc(scores, truth),
        average_precision: average_precision(scores, truth),
        confusion: cm,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from midranks (Mann-Whitney U).
pub fn roc_auc(scores: &[f64], truth: &[BinaryClass]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len(), "scores and truth differ in length");
    let n_pos = truth.iter().filter(|&&t| t == BinaryClass::Positive).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ranks are 1-based; a tie block spanning ranks lo..=hi gets (lo+hi)/2.
    // Doubling keeps everything integral until the final division.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]].total_cmp(&scores[order[start]]).is_eq() {
            end += 1;
        }
        let twice_mid = (start + 1 + end + 1) as u128;
        for &i in &order[start..=end] {
            if truth[i] == BinaryClass::Positive {
                twice_rank_sum += twice_mid;
            }
        }
        start = end + 1;
    }
    let np = n_pos as u128;
    let twice_u = twice_rank_sum - np * (np + 1);
    Some(twice_u as f64 / (2 * np * n_neg as u128) as f64)
}

/// Sum of `(R_k - R_{k-1}) * P_k` over the distinct score thresholds in
/// descending order.
pub fn average_precision(scores: &[f64], truth: &[BinaryClass]) -> Option<f64> {
    assert_eq!(scores.len(), truth.len(), "scores and truth differ in length");
    let n_pos = truth.iter().filter(|&&t| t == BinaryClass::Positive).count();
    if n_pos == 0 || n_pos == truth.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]].total_cmp(&s).is_eq() {
            match truth[order[i]] {
                BinaryClass::Positive => tp += 1,
                BinaryClass::Negative => fp += 1,
            }
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Assignment of items to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, item: &str) -> Option<usize> {
        self.assignments.get(item).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Item ids of one fold, sorted.
    pub fn fold_items(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Seeded per-class shuffle followed by round-robin dealing.
///
/// Items are first put in id order so the plan depends only on the item set
/// and the seed. The deal continues across classes from where the previous
/// class stopped, keeping total fold sizes within one of each other.
pub fn stratified_kfold(items: &[(String, BinaryClass)], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::TooFewFolds(k));
    }
    if k > items.len() {
        return Err(EvalError::TooManyFolds { k, items: items.len() });
    }
    let mut seen = HashSet::new();
    for (id, _) in items {
        if !seen.insert(id.as_str()) {
            return Err(EvalError::DuplicateItem(id.clone()));
        }
    }
    let mut rng = seeding::substream(seed, "folds");
    let mut assignments = BTreeMap::new();
    let mut next = 0;
    for class in [BinaryClass::Positive, BinaryClass::Negative] {
        let mut members: Vec<&String> = items.iter().filter(|(_, c)| *c == class).map(|(id, _)| id).collect();
        if members.is_empty() {
            return Err(EvalError::MissingClass(class));
        }
        members.sort();
        members.shuffle(&mut rng);
        for id in members {
            assignments.insert(id.clone(), next);
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, assignments })
}

/// A prepared example: lemmatized tokens plus its binary class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub item_id: String,
    pub tokens: TokenStream,
    pub class: BinaryClass,
}

/// Feature and solver settings shared by every fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub vocab_size: usize,
    pub train: TrainConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            vocab_size: textprep::DEFAULT_VOCAB_SIZE,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub vocab: Vocabulary,
    pub model: LinearModel,
}

impl Fit {
    pub fn score(&self, doc: &LabeledDoc) -> f64 {
        let x = textprep::vectorize(&doc.tokens, &self.vocab);
        svm::decision_function(&self.model, &x).expect("vector built from the fit's vocabulary")
    }

    pub fn scores<'a>(&self, docs: impl IntoIterator<Item = &'a LabeledDoc>) -> Vec<f64> {
        docs.into_iter().map(|d| self.score(d)).collect()
    }
}

/// Builds a vocabulary on `docs` alone and trains on them.
pub fn fit(docs: &[&LabeledDoc], settings: &ModelSettings) -> Result<Fit, EvalError> {
    let streams: Vec<TokenStream> = docs.iter().map(|d| d.tokens.clone()).collect();
    let vocab = textprep::build_vocabulary(&streams, settings.vocab_size)?;
    let data: Vec<_> = docs
        .iter()
        .map(|d| (textprep::vectorize(&d.tokens, &vocab), d.class))
        .collect();
    let model = svm::train(&data, &settings.train)?;
    Ok(Fit { vocab, model })
}

fn check_plan(docs: &[LabeledDoc], plan: &FoldPlan) -> Result<(), EvalError> {
    if docs.len() != plan.assignments.len() {
        return Err(EvalError::PlanMismatch(format!(
            "{} documents but {} planned items",
            docs.len(),
            plan.assignments.len()
        )));
    }
    for d in docs {
        match plan.fold_of(&d.item_id) {
            Some(f) if f < plan.k => {}
            Some(f) => return Err(EvalError::PlanMismatch(format!("fold {f} out of range for {:?}", d.item_id))),
            None => return Err(EvalError::PlanMismatch(format!("item {:?} is not in the plan", d.item_id))),
        }
    }
    Ok(())
}

/// Training and test documents for one fold, each in dataset order.
pub fn split<'a>(docs: &'a [LabeledDoc], plan: &FoldPlan, fold: usize) -> (Vec<&'a LabeledDoc>, Vec<&'a LabeledDoc>) {
    docs.iter().partition(|d| plan.fold_of(&d.item_id) != Some(fold))
}

/// Fits the model for `fold` on the other folds only.
pub fn fit_fold(docs: &[LabeledDoc], settings: &ModelSettings, plan: &FoldPlan, fold: usize) -> Result<Fit, EvalError> {
    let (train, _) = split(docs, plan, fold);
    fit(&train, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two defined folds.
    pub std: Option<f64>,
    pub defined_folds: usize,
}

pub fn summarize(values: &[Option<f64>], metric: Metric) -> MetricSummary {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n = defined.len();
    let mean = (n > 0).then(|| defined.iter().sum::<f64>() / n as f64);
    let std = mean.filter(|_| n >= 2).map(|m| {
        let ss: f64 = defined.iter().map(|v| (v - m).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    MetricSummary {
        metric,
        mean,
        std,
        defined_folds: n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<MetricsReport>,
    pub summary: Vec<MetricSummary>,
}

impl CvReport {
    pub fn from_folds(folds: Vec<MetricsReport>) -> Self {
        let summary = Metric::ALL
            .iter()
            .map(|&m| summarize(&folds.iter().map(|f| f.get(m)).collect::<Vec<_>>(), m))
            .collect();
        CvReport { folds, summary }
    }

    pub fn summary_for(&self, metric: Metric) -> &MetricSummary {
        self.summary.iter().find(|s| s.metric == metric).expect("all metrics summarized")
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.summary_for(metric).mean
    }

    pub fn std(&self, metric: Metric) -> Option<f64> {
        self.summary_for(metric).std
    }
}

pub fn cross_validate(docs: &[LabeledDoc], settings: &ModelSettings, plan: &FoldPlan) -> Result<CvReport, EvalError> {
    check_plan(docs, plan)?;
    let folds = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = split(docs, plan, fold);
            let fitted = fit(&train, settings)?;
            let scores = fitted.scores(test.iter().copied());
            let truth: Vec<BinaryClass> = test.iter().map(|d| d.class).collect();
            metrics(&scores, &truth, 0.0)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvReport::from_folds(folds))
}

pub fn labeled_items(docs: &[LabeledDoc]) -> Vec<(String, BinaryClass)> {
    docs.iter().map(|d| (d.item_id.clone(), d.class)).collect()
}

/// Powers of two up to 32 for the positive class, 1 for the negative class.
pub fn default_grid() -> Vec<(f64, f64)> {
    [1.0, 2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|&p| (p, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub class_weight_pos: f64,
    pub class_weight_neg: f64,
    pub mean_auc: Option<f64>,
    pub cv: CvReport,
}

impl GridPoint {
    fn ratio(&self) -> f64 {
        self.class_weight_pos / self.class_weight_neg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best_index: usize,
    pub best: TrainConfig,
    pub table: Vec<GridPoint>,
}

impl GridSearch {
    pub fn best_point(&self) -> &GridPoint {
        &self.table[self.best_index]
    }
}

/// Picks the grid point with the highest mean ROC AUC over `k` stratified
/// folds. Ties go to the smaller `c+ / c-` ratio, then to grid order.
pub fn grid_search_class_weights(
    docs: &[LabeledDoc],
    settings: &ModelSettings,
    grid: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<GridSearch, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let plan = stratified_kfold(&labeled_items(docs), k, seed)?;
    let table = grid
        .par_iter()
        .map(|&(pos, neg)| {
            let point_settings = ModelSettings {
                train: settings.train.with_class_weights(pos, neg),
                ..*settings
            };
            let cv = cross_validate(docs, &point_settings, &plan)?;
            Ok(GridPoint {
                class_weight_pos: pos,
                class_weight_neg: neg,
                mean_auc: cv.mean(Metric::RocAuc),
                cv,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let mut best_index = 0;
    for (i, p) in table.iter().enumerate().skip(1) {
        if better_point(p, &table[best_index]) {
            best_index = i;
        }
    }
    let best = settings
        .train
        .with_class_weights(table[best_index].class_weight_pos, table[best_index].class_weight_neg);
    Ok(GridSearch {
        best_index,
        best,
        table,
    })
}

/// Whether `a` beats the incumbent `b`; `a` comes later in grid order.
fn better_point(a: &GridPoint, b: &GridPoint) -> bool {
    match (a.mean_auc, b.mean_auc) {
        (Some(x), Some(y)) if (x - y).abs() > AUC_TIE_EPS => x > y,
        (Some(_), None) => true,
        (None, Some(_)) => false,
        _ => a.ratio() < b.ratio(),
    }
}

/// Train docs, test docs, each train doc's rank within its class
/// permutation, and the positive/negative train counts.
type CurveFold<'a> = (Vec<&'a LabeledDoc>, Vec<&'a LabeledDoc>, Vec<usize>, [usize; 2]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub fraction: f64,
    /// Mean training-subset size across folds.
    pub train_size: usize,
    pub train_score: Option<f64>,
    pub cv_score: Option<f64>,
}

/// Default learning-curve fractions 0.1, 0.2, ..., 1.0.
pub fn default_fractions() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Train and test ROC AUC as the training split grows.
///
/// Within each fold every class gets a fixed seeded permutation, and a
/// fraction `f` keeps the first `round(f * n_class)` members of each, so
/// smaller subsets are nested in larger ones. Kept documents stay in their
/// original order, which makes the `f = 1` point identical to plain
/// cross-validation. A fraction that leaves some fold without one of the
/// classes is skipped with a warning.
pub fn learning_curve(
    docs: &[LabeledDoc],
    settings: &ModelSettings,
    fractions: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<LearningCurvePoint>, EvalError> {
    let valid = !fractions.is_empty()
        && fractions.iter().all(|&f| f > 0.0 && f <= 1.0)
        && fractions.windows(2).all(|w| w[0] < w[1]);
    if !valid {
        return Err(EvalError::BadFractions(fractions.to_vec()));
    }
    let plan = stratified_kfold(&labeled_items(docs), k, seed)?;

    // Per fold: training docs and each one's position in its class permutation.
    let folds: Vec<CurveFold> = (0..plan.k)
        .map(|fold| {
            let (train, test) = split(docs, &plan, fold);
            let mut rng = seeding::substream(seed, &format!("curve/{fold}"));
            let mut position = vec![0; train.len()];
            let mut class_sizes = [0; 2];
            for (c, class) in [BinaryClass::Positive, BinaryClass::Negative].into_iter().enumerate() {
                let mut idx: Vec<usize> = (0..train.len()).filter(|&i| train[i].class == class).collect();
                idx.shuffle(&mut rng);
                for (rank, &i) in idx.iter().enumerate() {
                    position[i] = rank;
                }
                class_sizes[c] = idx.len();
            }
            (train, test, position, class_sizes)
        })
        .collect();

    let mut points = Vec::new();
    for &fraction in fractions {
        let keep = |n: usize| ((fraction * n as f64).round() as usize).min(n);
        if folds.iter().any(|(_, _, _, sizes)| keep(sizes[0]) == 0 || keep(sizes[1]) == 0) {
            log::warn!("learning curve: fraction {fraction} leaves a class without training examples; skipped");
            continue;
        }
        let per_fold = folds
            .par_iter()
            .map(|(train, test, position, sizes)| {
                let subset: Vec<&LabeledDoc> = train
                    .iter()
                    .zip(position)
                    .filter(|(d, &rank)| {
                        let limit = if d.class == BinaryClass::Positive { keep(sizes[0]) } else { keep(sizes[1]) };
                        rank < limit
                    })
                    .map(|(d, _)| *d)
                    .collect();
                let fitted = fit(&subset, settings)?;
                let train_truth: Vec<BinaryClass> = subset.iter().map(|d| d.class).collect();
                let test_truth: Vec<BinaryClass> = test.iter().map(|d| d.class).collect();
                let train_auc = roc_auc(&fitted.scores(subset.iter().copied()), &train_truth);
                let test_auc = roc_auc(&fitted.scores(test.iter().copied()), &test_truth);
                Ok((subset.len(), train_auc, test_auc))
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let sizes: usize = per_fold.iter().map(|p| p.0).sum();
        points.push(LearningCurvePoint {
            fraction,
            train_size: (sizes as f64 / per_fold.len() as f64).round() as usize,
            train_score: summarize(&per_fold.iter().map(|p| p.1).collect::<Vec<_>>(), Metric::RocAuc).mean,
            cv_score: summarize(&per_fold.iter().map(|p| p.2).collect::<Vec<_>>(), Metric::RocAuc).mean,
        });
    }
    Ok(points)
}
