//! End-to-end experiment: load and cross-check inputs, adjudicate, build the
//! requested dataset variants and, for each one, grid-search class weights,
//! cross-validate, draw a learning curve and fit a final model whose heaviest
//! n-grams are reported.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! manifest.json
//! variant_summary.csv
//! C1_V_R1S/{metrics.csv, learning_curve.csv, top_features.csv, gold_labels.csv, manifest.json}
//! ...
//! ```
//!
//! Every file is a pure function of the config and the input bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{
    self, adjudicate, binarize, build_variant, Adjudication, AnnotationError, AnnotationSet, BinaryClass,
    DatasetVariant, ItemStatus, TiePolicy, VariantName,
};
use crate::corpus::{self, CorpusError, Message, RuleSet};
use crate::eval::{self, EvalError, GridSearch, LabeledDoc, LearningCurvePoint, Metric, ModelSettings};
use crate::seeding;
use crate::svm::{self, SvmError, TopFeatures, TrainConfig};
use crate::textprep::{Lemmatizer, TextError, TextPipeline, Vocabulary, DEFAULT_VOCAB_SIZE};

pub const TOP_FEATURES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus_path: PathBuf,
    pub annotations_path: PathBuf,
    /// `None` uses the bundled rule file.
    pub ruleset_path: Option<PathBuf>,
    /// `None` uses the bundled lemma lexicon.
    pub lexicon_path: Option<PathBuf>,
    pub vocab_size: usize,
    pub k: usize,
    pub seed: u64,
    pub grid: Vec<(f64, f64)>,
    pub variants: Vec<VariantName>,
    pub output_dir: PathBuf,
    pub tie_policy: TiePolicy,
    pub reg_c: f64,
    pub tol: f64,
    pub max_epochs: usize,
    pub curve_fractions: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = TrainConfig::default();
        ExperimentConfig {
            corpus_path: PathBuf::from("corpus.jsonl"),
            annotations_path: PathBuf::from("annotations.jsonl"),
            ruleset_path: None,
            lexicon_path: None,
            vocab_size: DEFAULT_VOCAB_SIZE,
            k: eval::DEFAULT_FOLDS,
            seed: 0,
            grid: eval::default_grid(),
            variants: VariantName::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            tie_policy: TiePolicy::Unresolved,
            reg_c: solver.reg_c,
            tol: solver.tol,
            max_epochs: solver.max_epochs,
            curve_fractions: eval::default_fractions(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.vocab_size < 1 {
            return bad("vocab_size must be at least 1");
        }
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.grid.is_empty() {
            return bad("class-weight grid is empty");
        }
        if self.grid.iter().any(|&(p, n)| !(p > 0.0 && n > 0.0 && p.is_finite() && n.is_finite())) {
            return bad("class weights must be positive and finite");
        }
        if self.variants.is_empty() {
            return bad("no variants requested");
        }
        self.train_config().validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Solver settings before class weights are chosen.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            reg_c: self.reg_c,
            tol: self.tol,
            max_epochs: self.max_epochs,
            seed: seeding::substream_seed(self.seed, "solver"),
            ..TrainConfig::default()
        }
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            vocab_size: self.vocab_size,
            train: self.train_config(),
        }
    }

    /// Requested variants in canonical C1..C5 order without repeats.
    pub fn ordered_variants(&self) -> Vec<VariantName> {
        let wanted: BTreeSet<VariantName> = self.variants.iter().copied().collect();
        VariantName::ALL.into_iter().filter(|v| wanted.contains(v)).collect()
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("annotation refers to item {0:?}, which is not in the corpus")]
    UnknownItem(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Whether the failure is the caller's input rather than a fault here.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Corpus(_)
                | ExperimentError::Annotation(_)
                | ExperimentError::Text(_)
                | ExperimentError::UnknownItem(_)
        )
    }
}

/// Parsed, cross-checked inputs.
pub struct Inputs {
    pub messages: Vec<Message>,
    pub annotations: AnnotationSet,
    pub ruleset: RuleSet,
    pub pipeline: TextPipeline,
    /// sha256 of each input, in corpus, annotations, rules, lexicon order.
    pub digests: Vec<(&'static str, String)>,
}

impl Inputs {
    pub fn message(&self, id: &str) -> Option<&Message> {
        self.messages
            .binary_search_by(|m| m.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.messages[i])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CorpusError> {
    fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs, ExperimentError> {
    let corpus_bytes = read_bytes(&config.corpus_path)?;
    let mut messages = corpus::read_corpus(&config.corpus_path)?;
    messages.sort_by(|a, b| a.id.cmp(&b.id));

    let annotation_bytes = read_bytes(&config.annotations_path)?;
    let annotations = AnnotationSet::new(annotation::read_annotations(&config.annotations_path)?)?;

    let (ruleset, rules_bytes) = match &config.ruleset_path {
        Some(p) => (corpus::load_ruleset(p)?, read_bytes(p)?),
        None => (RuleSet::bundled(), RuleSet::bundled_source().as_bytes().to_vec()),
    };
    let (lemmatizer, lexicon_bytes) = match &config.lexicon_path {
        Some(p) => (Lemmatizer::load(p)?, read_bytes(p)?),
        None => (Lemmatizer::bundled(), Lemmatizer::bundled_source().as_bytes().to_vec()),
    };

    let inputs = Inputs {
        messages,
        annotations,
        ruleset,
        pipeline: TextPipeline::new(lemmatizer),
        digests: vec![
            ("corpus", sha256_hex(&corpus_bytes)),
            ("annotations", sha256_hex(&annotation_bytes)),
            ("ruleset", sha256_hex(&rules_bytes)),
            ("lexicon", sha256_hex(&lexicon_bytes)),
        ],
    };
    if let Some(missing) = inputs.annotations.all_item_ids().find(|id| inputs.message(id).is_none()) {
        return Err(ExperimentError::UnknownItem(missing.to_string()));
    }
    Ok(inputs)
}

/// Hash over every config field except the output location, plus the
/// content of every input.
pub fn config_hash(config: &ExperimentConfig, inputs: &Inputs) -> String {
    let mut hasher = Sha256::new();
    hasher.update(hashed_config(config).to_string().as_bytes());
    for (name, digest) in &inputs.digests {
        hasher.update(name.as_bytes());
        hasher.update(digest.as_bytes());
    }
    hex(&hasher.finalize())
}

fn hashed_config(config: &ExperimentConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    let obj = v.as_object_mut().expect("config is an object");
    obj.remove("output_dir");
    // Paths are identified by content through the input digests.
    for key in ["corpus_path", "annotations_path", "ruleset_path", "lexicon_path"] {
        obj.remove(key);
    }
    v
}

/// Binary-labeled, lemmatized documents for a variant, in item order.
pub fn variant_docs(variant: &DatasetVariant, inputs: &Inputs) -> Vec<LabeledDoc> {
    variant
        .items
        .iter()
        .map(|g| {
            let msg = inputs.message(&g.item_id).expect("items checked against the corpus");
            LabeledDoc {
                item_id: g.item_id.clone(),
                tokens: inputs.pipeline.prepare(&msg.anon_text),
                class: binarize(g.label),
            }
        })
        .collect()
}

pub fn class_counts(docs: &[LabeledDoc]) -> (usize, usize) {
    let pos = docs.iter().filter(|d| d.class == BinaryClass::Positive).count();
    (pos, docs.len() - pos)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VariantStatus {
    Trained,
    Skipped { reason: String },
}

/// Everything computed for one variant.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: DatasetVariant,
    pub status: VariantStatus,
    pub positives: usize,
    pub negatives: usize,
    pub trained: Option<TrainedVariant>,
}

#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub grid: GridSearch,
    pub curve: Vec<LearningCurvePoint>,
    pub vocab: Vocabulary,
    pub top: TopFeatures,
    pub fold_plan_sha256: String,
    pub fold_sizes: Vec<usize>,
}

impl VariantResult {
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.variant.name.model(), self.variant.name.id())
    }
}

pub fn run_variant(
    name: VariantName,
    adjudication: &Adjudication,
    inputs: &Inputs,
    config: &ExperimentConfig,
) -> Result<VariantResult, ExperimentError> {
    let variant = build_variant(name, adjudication);
    let docs = variant_docs(&variant, inputs);
    let (positives, negatives) = class_counts(&docs);
    let mut result = VariantResult {
        variant,
        status: VariantStatus::Trained,
        positives,
        negatives,
        trained: None,
    };
    if positives < config.k || negatives < config.k {
        let reason = format!(
            "{positives} positive and {negatives} negative items; each class needs at least k = {}",
            config.k
        );
        log::warn!("{}: skipped, {reason}", name.id());
        result.status = VariantStatus::Skipped { reason };
        return Ok(result);
    }

    let settings = config.model_settings();
    log::info!("{}: grid search over {} points on {} items", name.id(), config.grid.len(), docs.len());
    let grid = eval::grid_search_class_weights(&docs, &settings, &config.grid, config.k, config.seed)?;
    let best = ModelSettings {
        train: grid.best,
        ..settings
    };
    let curve = eval::learning_curve(&docs, &best, &config.curve_fractions, config.k, config.seed)?;

    let all: Vec<&LabeledDoc> = docs.iter().collect();
    let fitted = eval::fit(&all, &best)?;
    let top = svm::top_features(&fitted.model, &fitted.vocab, TOP_FEATURES.min(fitted.vocab.len()))?;

    let plan = eval::stratified_kfold(&eval::labeled_items(&docs), config.k, config.seed)?;
    let plan_json = serde_json::to_string(&plan.assignments).expect("plan serializes");

    result.trained = Some(TrainedVariant {
        grid,
        curve,
        vocab: fitted.vocab,
        top,
        fold_plan_sha256: sha256_hex(plan_json.as_bytes()),
        fold_sizes: plan.fold_sizes(),
    });
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub adjudication: Adjudication,
    pub filter_matched: usize,
    pub variants: Vec<VariantResult>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let hash = config_hash(config, &inputs);
    let adjudication = adjudicate(&inputs.annotations, config.tie_policy)?;
    let filter_matched = inputs
        .messages
        .iter()
        .filter(|m| corpus::filter_match(&inputs.ruleset, m).matched)
        .count();

    // Variants run one after another; each already saturates the pool with
    // its grid points and folds.
    let mut variants = Vec::new();
    for name in config.ordered_variants() {
        variants.push(run_variant(name, &adjudication, &inputs, config)?);
    }
    let report = ExperimentReport {
        config_hash: hash,
        adjudication,
        filter_matched,
        variants,
    };
    write_report(config, &inputs, &report)?;
    Ok(report)
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.6}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "NA".to_string())
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
}

pub fn metrics_csv(model: &str, cv: &eval::CvReport) -> String {
    let mut w = csv_writer();
    w.write_record(["model", "metric", "value"]).unwrap();
    for m in Metric::ALL {
        let s = cv.summary_for(m);
        w.write_record([model, &format!("mean/{m}"), &fmt_opt(s.mean)]).unwrap();
        w.write_record([model, &format!("std/{m}"), &fmt_opt(s.std)]).unwrap();
    }
    for (i, fold) in cv.folds.iter().enumerate() {
        for m in Metric::ALL {
            w.write_record([model, &format!("fold{i}/{m}"), &fmt_opt(fold.get(m))]).unwrap();
        }
    }
    finish(w)
}

pub fn learning_curve_csv(model: &str, curve: &[LearningCurvePoint]) -> String {
    let mut w = csv_writer();
    w.write_record(["model", "train_size", "train_score", "cv_score"]).unwrap();
    for p in curve {
        w.write_record([model, &p.train_size.to_string(), &fmt_opt(p.train_score), &fmt_opt(p.cv_score)])
            .unwrap();
    }
    finish(w)
}

pub fn top_features_csv(model: &str, top: &TopFeatures) -> String {
    let mut w = csv_writer();
    w.write_record(["model", "class", "rank", "ngram", "weight"]).unwrap();
    for (class, list) in [("positive", &top.positive), ("negative", &top.negative)] {
        for (rank, (ngram, weight)) in list.iter().enumerate() {
            w.write_record([model, class, &(rank + 1).to_string(), ngram, &fmt_f64(*weight)]).unwrap();
        }
    }
    finish(w)
}

pub fn variant_summary_csv(variants: &[VariantResult]) -> String {
    let mut w = csv_writer();
    w.write_record([
        "model",
        "variant",
        "status",
        "items",
        "A",
        "B",
        "C",
        "D",
        "positive",
        "negative",
        "unigrams",
        "bigrams",
        "trigrams",
        "features",
        "best_class_weight_pos",
        "best_class_weight_neg",
        "mean_roc_auc",
        "std_roc_auc",
        "mean_average_precision",
        "mean_f1",
    ])
    .unwrap();
    for v in variants {
        let counts = v.variant.label_counts();
        let mut row = vec![
            v.variant.name.model().to_string(),
            v.variant.name.id().to_string(),
            match v.status {
                VariantStatus::Trained => "trained".to_string(),
                VariantStatus::Skipped { .. } => "skipped".to_string(),
            },
            v.variant.len().to_string(),
        ];
        row.extend(counts.iter().map(|c| c.to_string()));
        row.push(v.positives.to_string());
        row.push(v.negatives.to_string());
        match &v.trained {
            Some(t) => {
                let uniq = t.vocab.unique_by_order();
                row.extend(uniq.iter().map(|c| c.to_string()));
                row.push(t.vocab.len().to_string());
                let best = t.grid.best_point();
                let cv = &best.cv;
                row.push(fmt_f64(best.class_weight_pos));
                row.push(fmt_f64(best.class_weight_neg));
                row.push(fmt_opt(cv.mean(Metric::RocAuc)));
                row.push(fmt_opt(cv.std(Metric::RocAuc)));
                row.push(fmt_opt(cv.mean(Metric::AveragePrecision)));
                row.push(fmt_opt(cv.mean(Metric::F1)));
            }
            None => row.extend(std::iter::repeat_n("NA".to_string(), 10)),
        }
        w.write_record(&row).unwrap();
    }
    finish(w)
}

fn summary_json(cv: &eval::CvReport) -> serde_json::Value {
    cv.summary
        .iter()
        .map(|s| {
            (
                s.metric.name().to_string(),
                json!({ "mean": s.mean, "std": s.std, "defined_folds": s.defined_folds }),
            )
        })
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn variant_manifest(v: &VariantResult, config: &ExperimentConfig, hash: &str) -> serde_json::Value {
    let mut m = json!({
        "model": v.variant.name.model(),
        "variant": v.variant.name.id(),
        "seed": config.seed,
        "config_hash": hash,
        "items": v.variant.len(),
        "positive": v.positives,
        "negative": v.negatives,
    });
    let obj = m.as_object_mut().unwrap();
    match (&v.status, &v.trained) {
        (VariantStatus::Trained, Some(t)) => {
            obj.insert("status".into(), json!("trained"));
            obj.insert("k".into(), json!(config.k));
            obj.insert("fold_sizes".into(), json!(t.fold_sizes));
            obj.insert("fold_plan_sha256".into(), json!(t.fold_plan_sha256));
            obj.insert(
                "grid".into(),
                t.grid
                    .table
                    .iter()
                    .map(|p| {
                        json!({
                            "class_weight_pos": p.class_weight_pos,
                            "class_weight_neg": p.class_weight_neg,
                            "mean_roc_auc": p.mean_auc,
                            "std_roc_auc": p.cv.std(Metric::RocAuc),
                        })
                    })
                    .collect(),
            );
            obj.insert("solver".into(), serde_json::to_value(t.grid.best).unwrap());
            obj.insert("metrics".into(), summary_json(&t.grid.best_point().cv));
            obj.insert(
                "vocabulary".into(),
                json!({ "size": t.vocab.len(), "unique_by_order": t.vocab.unique_by_order() }),
            );
        }
        (VariantStatus::Skipped { reason }, _) => {
            obj.insert("status".into(), json!("skipped"));
            obj.insert("reason".into(), json!(reason));
        }
        (VariantStatus::Trained, None) => unreachable!("trained variants carry results"),
    }
    m
}

fn top_manifest(config: &ExperimentConfig, inputs: &Inputs, report: &ExperimentReport) -> serde_json::Value {
    let adj = &report.adjudication;
    let agreement = adj.expert_agreement();
    json!({
        "seed": config.seed,
        "config_hash": report.config_hash,
        "config": hashed_config(config),
        "inputs": inputs.digests.iter().map(|(n, d)| (n.to_string(), json!(d))).collect::<serde_json::Map<_, _>>(),
        "corpus": {
            "messages": inputs.messages.len(),
            "filter_matched": report.filter_matched,
            "ruleset": inputs.ruleset.name,
            "rules": inputs.ruleset.len(),
        },
        "annotation": {
            "items": adj.len(),
            "crowd_unanimous": adj.count(ItemStatus::CrowdUnanimous),
            "round2_queue": adj.round2_queue().count(),
            "expert_agreed": adj.count(ItemStatus::ExpertAgreed),
            "crowd_fallback": adj.count(ItemStatus::CrowdFallback),
            "dropped": adj.count(ItemStatus::Dropped),
            "pending": adj.count(ItemStatus::Pending),
            "crowd_unanimity_percent": adj.crowd_unanimity_percent(),
            "expert_kappa": agreement.as_ref().map(|a| a.kappa),
            "expert_items": agreement.as_ref().map_or(0, |a| a.items),
        },
        "variants": report.variants.iter().map(|v| {
            let mut e = json!({ "variant": v.variant.name.id(), "directory": v.dir_name() });
            let status = serde_json::to_value(&v.status).unwrap();
            e.as_object_mut().unwrap().extend(status.as_object().unwrap().clone());
            e
        }).collect::<Vec<_>>(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Output {
        path: path.display().to_string(),
        source,
    })
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

pub fn write_report(config: &ExperimentConfig, inputs: &Inputs, report: &ExperimentReport) -> Result<(), ExperimentError> {
    let out = &config.output_dir;
    let mkdir = |p: &Path| {
        fs::create_dir_all(p).map_err(|source| ExperimentError::Output {
            path: p.display().to_string(),
            source,
        })
    };
    mkdir(out)?;
    for v in &report.variants {
        let dir = out.join(v.dir_name());
        mkdir(&dir)?;
        let model = v.variant.name.model();
        write_file(&dir.join("gold_labels.csv"), &annotation::gold_labels_csv(&v.variant.items))?;
        let (metrics, curve, top) = match &v.trained {
            Some(t) => (
                metrics_csv(model, &t.grid.best_point().cv),
                learning_curve_csv(model, &t.curve),
                top_features_csv(model, &t.top),
            ),
            None => (
                metrics_csv(model, &eval::CvReport::from_folds(Vec::new())),
                learning_curve_csv(model, &[]),
                top_features_csv(
                    model,
                    &TopFeatures {
                        positive: Vec::new(),
                        negative: Vec::new(),
                    },
                ),
            ),
        };
        write_file(&dir.join("metrics.csv"), &metrics)?;
        write_file(&dir.join("learning_curve.csv"), &curve)?;
        write_file(&dir.join("top_features.csv"), &top)?;
        write_file(&dir.join("manifest.json"), &pretty(&variant_manifest(v, config, &report.config_hash)))?;
    }
    write_file(&out.join("variant_summary.csv"), &variant_summary_csv(&report.variants))?;
    write_file(&out.join("manifest.json"), &pretty(&top_manifest(config, inputs, report)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthConfig};

    fn fixture(dir: &Path, n: usize) -> ExperimentConfig {
        let data = synth::generate(&SynthConfig {
            n_items: n,
            ..SynthConfig::default()
        });
        data.write(dir).unwrap();
        ExperimentConfig {
            corpus_path: dir.join("corpus.jsonl"),
            annotations_path: dir.join("annotations.jsonl"),
            output_dir: dir.join("out"),
            k: 3,
            grid: vec![(1.0, 1.0), (4.0, 1.0)],
            curve_fractions: vec![0.5, 1.0],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        for bad in [
            ExperimentConfig { k: 1, ..Default::default() },
            ExperimentConfig { vocab_size: 0, ..Default::default() },
            ExperimentConfig { grid: vec![], ..Default::default() },
            ExperimentConfig { grid: vec![(0.0, 1.0)], ..Default::default() },
            ExperimentConfig { variants: vec![], ..Default::default() },
            ExperimentConfig { reg_c: -1.0, ..Default::default() },
        ] {
            let err = bad.validate().unwrap_err();
            assert!(err.is_input_error());
        }
    }

    #[test]
    fn variant_order_is_canonical() {
        let c = ExperimentConfig {
            variants: vec![VariantName::R1uR2u, VariantName::R1S, VariantName::R1uR2u],
            ..Default::default()
        };
        assert_eq!(c.ordered_variants(), vec![VariantName::R1S, VariantName::R1uR2u]);
    }

    #[test]
    fn unknown_item_fails_fast() {
        let tmp = tempfile::tempdir().unwrap();
        let config = fixture(tmp.path(), 60);
        let mut text = fs::read_to_string(&config.annotations_path).unwrap();
        text.push_str(&annotation::Annotation::crowd("zz_missing", "w00", annotation::Label::A).to_json_line());
        text.push('\n');
        fs::write(&config.annotations_path, text).unwrap();
        match run_experiment(&config) {
            Err(ExperimentError::UnknownItem(id)) => assert_eq!(id, "zz_missing"),
            other => panic!("expected unknown item, got {other:?}"),
        }
        assert!(!config.output_dir.exists());
    }

    #[test]
    fn hash_tracks_config_and_inputs_but_not_output_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let config = fixture(tmp.path(), 40);
        let inputs = load_inputs(&config).unwrap();
        let h = config_hash(&config, &inputs);
        let moved = ExperimentConfig {
            output_dir: tmp.path().join("elsewhere"),
            ..config.clone()
        };
        assert_eq!(config_hash(&moved, &inputs), h);
        let reseeded = ExperimentConfig { seed: 9, ..config.clone() };
        assert_ne!(config_hash(&reseeded, &inputs), h);

        let mut text = fs::read_to_string(&config.corpus_path).unwrap();
        text.push('\n');
        fs::write(&config.corpus_path, text).unwrap();
        assert_ne!(config_hash(&config, &load_inputs(&config).unwrap()), h);
    }

    #[test]
    fn small_run_writes_the_expected_tree() {
        let tmp = tempfile::tempdir().unwrap();
        let config = fixture(tmp.path(), 240);
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.variants.len(), 5);
        for v in &report.variants {
            let dir = config.output_dir.join(v.dir_name());
            let mut files: Vec<String> = fs::read_dir(&dir)
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            files.sort();
            assert_eq!(
                files,
                ["gold_labels.csv", "learning_curve.csv", "manifest.json", "metrics.csv", "top_features.csv"]
            );
            let gold = fs::read_to_string(dir.join("gold_labels.csv")).unwrap();
            assert_eq!(gold.lines().count(), v.variant.len() + 1);
        }
        assert!(config.output_dir.join("variant_summary.csv").exists());
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(config.output_dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seed"], json!(0));
        assert_eq!(manifest["config_hash"], json!(report.config_hash));
    }

    #[test]
    fn tiny_variant_is_skipped_and_recorded() {
        let tmp = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            k: 40,
            variants: vec![VariantName::R2U],
            ..fixture(tmp.path(), 120)
        };
        let report = run_experiment(&config).unwrap();
        assert!(matches!(report.variants[0].status, VariantStatus::Skipped { .. }));
        let m: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(config.output_dir.join("C3_V_R2U").join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(m["status"], json!("skipped"));
        assert!(m["reason"].as_str().unwrap().contains("k = 40"));
    }
}
