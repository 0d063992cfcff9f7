//! Longitudinal retrieval toolkit.
//!
//! Indexes evolving corpus snapshots, stores historical relevance
//! feedback, and rewrites recurring queries counterfactually: previously
//! relevant document versions are treated as still useful even when the
//! live corpus has moved on. Three rewriting approaches are provided
//! (score boosting, relevance-feedback expansion, keyquery construction)
//! together with the evaluation machinery to compare them: nDCG@k with
//! and without unjudged documents, Bonferroni-corrected paired t-tests,
//! a never-seen-document ablation, and corpus-drift profiling.
//!
//! Modules follow the data flow: [`corpus`] ingests and diffs snapshots,
//! [`index`] builds per-snapshot BM25 indexes, [`history`] stores
//! judgments, [`rewrite`] derives queries from them, [`eval`] scores
//! runs, [`testkit`] generates synthetic collections, and [`pipeline`]
//! wires everything into a reproducible experiment.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod history;
pub mod index;
pub mod pipeline;
pub mod rewrite;
pub mod testkit;
pub mod text;

pub use error::{Error, Result};
