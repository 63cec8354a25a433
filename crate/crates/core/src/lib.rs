//! Annotation-budget simulation and evaluation toolkit for statutory
//! interpretation sentence ranking.
//!
//! * [`dataset`] reads sentence datasets and model score files.
//! * [`folds`] assigns concepts to stratified cross-validation/test folds.
//! * [`sampling`] simulates per-concept annotation budgets.
//! * [`metrics`] computes NDCG, accuracy/F1, ensembles and run aggregates.
//! * [`llm`] annotates sentences with an OpenAI-compatible chat endpoint.
//! * [`experiment`] wires these into budget and LLM experiments.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod folds;
pub mod label;
pub mod llm;
pub mod metrics;
pub mod rng;
pub mod sampling;

pub use dataset::{parse_dataset, parse_scores, Dataset, ScoreTable, SentenceRecord};
pub use error::{Error, Result};
pub use label::RelevanceLabel;
pub use sampling::Budget;
