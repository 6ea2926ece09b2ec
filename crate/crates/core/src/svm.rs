//! Class-weighted soft-margin linear SVM.
//!
//! Minimizes
//!
//! ```text
//! P(w, b) = 1/2 (|w|^2 + b^2) + C * sum_i c_{y_i} * max(0, 1 - y_i (w.x_i + b))
//! ```
//!
//! The bias is an extra weight on a constant feature of value 1, so it is
//! regularized together with `w`. The solver is dual coordinate descent on
//! the box-constrained dual
//!
//! ```text
//! D(a) = sum_i a_i - 1/2 |sum_i a_i y_i [x_i, 1]|^2,   0 <= a_i <= C c_{y_i}
//! ```
//!
//! visiting coordinates in a seeded random order each epoch. The returned
//! model is the best primal point seen; training stops once the relative
//! duality gap `(P - D) / P` falls below `tol`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::BinaryClass;
use crate::textprep::{FeatureVector, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training data is empty")]
    EmptyData,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("objective became non-finite in epoch {epoch}; lower C or the class weights")]
    Diverged { epoch: usize },
    #[error("requested {k} features but the model has {dimension}")]
    TooManyFeatures { k: usize, dimension: usize },
}

/// A training example's features, dense or sparse.
pub trait FeatureRow {
    fn dimension(&self) -> usize;
    fn dot(&self, w: &[f64]) -> f64;
    /// `w += scale * x`
    fn add_scaled_to(&self, scale: f64, w: &mut [f64]);
    fn squared_norm(&self) -> f64;
}

impl FeatureRow for FeatureVector {
    fn dimension(&self) -> usize {
        FeatureVector::dimension(self)
    }

    fn dot(&self, w: &[f64]) -> f64 {
        self.active().iter().map(|&p| w[p as usize]).sum()
    }

    fn add_scaled_to(&self, scale: f64, w: &mut [f64]) {
        for &p in self.active() {
            w[p as usize] += scale;
        }
    }

    fn squared_norm(&self) -> f64 {
        self.active().len() as f64
    }
}

/// Real-valued dense features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRow(pub Vec<f64>);

impl FeatureRow for DenseRow {
    fn dimension(&self) -> usize {
        self.0.len()
    }

    fn dot(&self, w: &[f64]) -> f64 {
        self.0.iter().zip(w).map(|(x, w)| x * w).sum()
    }

    fn add_scaled_to(&self, scale: f64, w: &mut [f64]) {
        for (wi, x) in w.iter_mut().zip(&self.0) {
            *wi += scale * x;
        }
    }

    fn squared_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Global penalty `C`.
    pub reg_c: f64,
    pub class_weight_pos: f64,
    pub class_weight_neg: f64,
    /// Relative duality gap at which training stops.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            reg_c: 1.0,
            class_weight_pos: 1.0,
            class_weight_neg: 1.0,
            tol: 1e-6,
            max_epochs: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_class_weights(self, pos: f64, neg: f64) -> Self {
        TrainConfig {
            class_weight_pos: pos,
            class_weight_neg: neg,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SvmError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("reg_c", self.reg_c)?;
        positive("class_weight_pos", self.class_weight_pos)?;
        positive("class_weight_neg", self.class_weight_neg)?;
        positive("tol", self.tol)?;
        if self.tol >= 1.0 {
            return Err(SvmError::InvalidConfig(format!("tol must be below 1, got {}", self.tol)));
        }
        if self.max_epochs == 0 {
            return Err(SvmError::InvalidConfig("max_epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn class_weight(&self, class: BinaryClass) -> f64 {
        match class {
            BinaryClass::Positive => self.class_weight_pos,
            BinaryClass::Negative => self.class_weight_neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
    pub objective_value: f64,
    pub epochs: usize,
    pub converged: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dimension: usize,
    bias: f64,
    weights: Vec<f64>,
    config: TrainConfig,
    #[serde(default)]
    objective_value: f64,
    #[serde(default)]
    epochs: usize,
    #[serde(default)]
    converged: bool,
}

impl From<LinearModel> for ModelFile {
    fn from(m: LinearModel) -> Self {
        ModelFile {
            dimension: m.weights.len(),
            bias: m.bias,
            weights: m.weights,
            config: m.config,
            objective_value: m.objective_value,
            epochs: m.epochs,
            converged: m.converged,
        }
    }
}

impl TryFrom<ModelFile> for LinearModel {
    type Error = String;

    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        if f.weights.len() != f.dimension {
            return Err(format!("model declares dimension {} but has {} weights", f.dimension, f.weights.len()));
        }
        Ok(LinearModel {
            weights: f.weights,
            bias: f.bias,
            config: f.config,
            objective_value: f.objective_value,
            epochs: f.epochs,
            converged: f.converged,
        })
    }
}

impl LinearModel {
    /// An untrained model with all weights zero.
    pub fn zeros(dimension: usize, config: TrainConfig) -> Self {
        LinearModel {
            weights: vec![0.0; dimension],
            bias: 0.0,
            config,
            objective_value: 0.0,
            epochs: 0,
            converged: false,
        }
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }
}

fn check_dims<R: FeatureRow>(dimension: usize, data: &[(R, BinaryClass)]) -> Result<(), SvmError> {
    match data.iter().find(|(x, _)| x.dimension() != dimension) {
        Some((x, _)) => Err(SvmError::DimensionMismatch {
            expected: dimension,
            got: x.dimension(),
        }),
        None => Ok(()),
    }
}

fn primal<R: FeatureRow>(w: &[f64], b: f64, data: &[(R, BinaryClass)], config: &TrainConfig) -> f64 {
    let reg = 0.5 * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    let loss: f64 = data
        .iter()
        .map(|(x, y)| config.class_weight(*y) * (1.0 - y.sign() * (x.dot(w) + b)).max(0.0))
        .sum();
    reg + config.reg_c * loss
}

/// Primal objective of `model` on `data`, using the model's own config.
pub fn objective<R: FeatureRow>(model: &LinearModel, data: &[(R, BinaryClass)]) -> Result<f64, SvmError> {
    check_dims(model.dimension(), data)?;
    Ok(primal(&model.weights, model.bias, data, &model.config))
}

/// A subgradient of the objective: `(d/dw, d/db)`. Examples sitting exactly
/// on the margin contribute nothing.
pub fn subgradient<R: FeatureRow>(model: &LinearModel, data: &[(R, BinaryClass)]) -> Result<(Vec<f64>, f64), SvmError> {
    check_dims(model.dimension(), data)?;
    let mut gw = model.weights.clone();
    let mut gb = model.bias;
    for (x, y) in data {
        let margin = y.sign() * (x.dot(&model.weights) + model.bias);
        if margin < 1.0 {
            let scale = -model.config.reg_c * model.config.class_weight(*y) * y.sign();
            x.add_scaled_to(scale, &mut gw);
            gb += scale;
        }
    }
    Ok((gw, gb))
}

pub fn train<R: FeatureRow>(data: &[(R, BinaryClass)], config: &TrainConfig) -> Result<LinearModel, SvmError> {
    train_traced(data, config).map(|(m, _)| m)
}

/// Trains and also returns the objective of the retained model after each
/// epoch, starting with the all-zero model.
pub fn train_traced<R: FeatureRow>(
    data: &[(R, BinaryClass)],
    config: &TrainConfig,
) -> Result<(LinearModel, Vec<f64>), SvmError> {
    config.validate()?;
    let dimension = data.first().ok_or(SvmError::EmptyData)?.0.dimension();
    check_dims(dimension, data)?;

    let n = data.len();
    let q_diag: Vec<f64> = data.iter().map(|(x, _)| x.squared_norm() + 1.0).collect();
    let upper: Vec<f64> = data.iter().map(|(_, y)| config.reg_c * config.class_weight(*y)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dimension];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best_w = w.clone();
    let mut best_b = b;
    let mut best = primal(&w, b, data, config);
    let mut trace = vec![best];
    let mut converged = false;
    let mut epochs = 0;

    for epoch in 1..=config.max_epochs {
        epochs = epoch;
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &data[i];
            let ys = y.sign();
            let g = ys * (x.dot(&w) + b) - 1.0;
            let projected = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper[i] {
                g.max(0.0)
            } else {
                g
            };
            if projected == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / q_diag[i]).clamp(0.0, upper[i]);
            let step = (alpha[i] - old) * ys;
            if step != 0.0 {
                x.add_scaled_to(step, &mut w);
                b += step;
            }
        }

        let current = primal(&w, b, data, config);
        if !current.is_finite() {
            return Err(SvmError::Diverged { epoch });
        }
        if current < best {
            best = current;
            best_w.clone_from(&w);
            best_b = b;
        }
        trace.push(best);

        let norm2 = w.iter().map(|v| v * v).sum::<f64>() + b * b;
        let dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
        if (best - dual) <= config.tol * best {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("svm stopped after {epochs} epochs without reaching tol {}", config.tol);
    }

    let model = LinearModel {
        weights: best_w,
        bias: best_b,
        config: *config,
        objective_value: best,
        epochs,
        converged,
    };
    Ok((model, trace))
}

/// `w.x + b`.
pub fn decision_function<R: FeatureRow>(model: &LinearModel, x: &R) -> Result<f64, SvmError> {
    if x.dimension() != model.dimension() {
        return Err(SvmError::DimensionMismatch {
            expected: model.dimension(),
            got: x.dimension(),
        });
    }
    Ok(x.dot(&model.weights) + model.bias)
}

/// Positive iff the score is strictly above zero.
pub fn classify(score: f64) -> BinaryClass {
    if score > 0.0 {
        BinaryClass::Positive
    } else {
        BinaryClass::Negative
    }
}

pub fn predict<R: FeatureRow>(model: &LinearModel, x: &R) -> Result<BinaryClass, SvmError> {
    decision_function(model, x).map(classify)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopFeatures {
    /// Largest weights, descending.
    pub positive: Vec<(String, f64)>,
    /// Most negative weights, ascending.
    pub negative: Vec<(String, f64)>,
}

pub fn top_features(model: &LinearModel, vocab: &Vocabulary, k: usize) -> Result<TopFeatures, SvmError> {
    if vocab.len() != model.dimension() {
        return Err(SvmError::DimensionMismatch {
            expected: model.dimension(),
            got: vocab.len(),
        });
    }
    if k > model.dimension() {
        return Err(SvmError::TooManyFeatures {
            k,
            dimension: model.dimension(),
        });
    }
    let mut ranked: Vec<(String, f64)> = vocab.entries().iter().cloned().zip(model.weights.iter().copied()).collect();

    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let positive = ranked[..k].to_vec();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let negative = ranked[..k].to_vec();
    Ok(TopFeatures { positive, negative })
}
