//! Conversation models for categorizing discussion-forum posts.
//!
//! Threads are modeled as HMMs whose hidden states are post categories
//! (Problem, Solution, Clarification-Request, Clarification, Feedback,
//! Other) and whose emissions score a post's n-grams, POS tags, discrete
//! features or a Gaussian mixture over its count vector. Priors come either
//! from complete-linkage clustering of post vectors (unsupervised) or from a
//! small labeled fold (semi-supervised); training iterates hard-EM with
//! Viterbi reassignment.
//!
//! Module map:
//! - [`corpus`]: thread/post data model, JSON-Lines ingestion, validation
//! - [`preprocess`]: n-gram bags, count vectors, cosine distance
//! - [`clusterer`]: complete-linkage agglomeration, insertion-state merging
//! - [`emission`]: language models, feature models, GMMs, fractional lambda
//! - [`hmm`]: parameters, Viterbi, the EM training loops, model files
//! - [`mapping`]: Kuhn-Munkres cluster-to-label assignment
//! - [`evaluation`]: metric suite, baselines, coarse-grained collapse
//! - [`experiment`]: cross-validation, repetitions, sweeps, run rejection

pub mod clusterer;
pub mod config;
pub mod corpus;
pub mod emission;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod hmm;
pub mod mapping;
pub mod preprocess;
pub mod synthetic;

pub use config::{ExperimentConfig, ModelConfig};
pub use corpus::Corpus;
pub use error::{Error, Result};
