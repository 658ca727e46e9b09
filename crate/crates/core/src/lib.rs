//! Measurement harness for the pull that a language model's task priors exert on
//! its in-context-learning predictions in multilabel emotion recognition.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`] loads, pools and subsamples labelled datasets.
//! * [`metrics`] scores two aligned prediction maps with Jaccard, Micro F1 and Macro F1.
//! * [`sampling`] draws demonstrations under every sampling scheme (ground truth,
//!   task-recognition randomisations, same-examples-different-labels, prior-reinforced
//!   prompts and similarity retrieval).
//! * [`prompt`] renders prompts and parses completions back into label sets.
//! * [`model`] talks to OpenAI-compatible endpoints through a transcript cache, and
//!   provides a deterministic mock oracle with tunable prior pull.
//! * [`analysis`] executes runs and computes improvement, pull, consistency and proxy
//!   performance.
//! * [`experiment`] validates configs, names runs and orchestrates whole experiments.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the `parallel`
//! feature is enabled and falls back to sequential iteration otherwise.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod hashing;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod sampling;

pub use corpus::{EmotionTaxonomy, LabelSet, LabeledExample, MultilabelDataset, Split};
pub use error::{Error, Result};
pub use metrics::{MetricTriple, PredictionMap};
