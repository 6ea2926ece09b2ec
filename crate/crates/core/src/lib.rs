//! Corpus filtering, multi-annotator gold-label construction, n-gram features,
//! a class-weighted linear SVM and the evaluation harness that ties them
//! together into reproducible experiments.

pub mod annotation;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod seeding;
pub mod svm;
pub mod synth;
pub mod textprep;

pub use annotation::{BinaryClass, GoldLabel, Label, Provenance, VariantName};
pub use corpus::{Message, RuleSet, Source};
pub use svm::{LinearModel, TrainConfig};
pub use textprep::{FeatureVector, TokenStream, Vocabulary};
