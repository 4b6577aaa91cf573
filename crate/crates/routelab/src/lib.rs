//! A desk-scale workbench for LLM-routing security experiments.
//!
//! The crate covers the full loop on synthetic corpora with reproducible
//! seeds:
//!
//! - [`corpus`] — query/trigger generation, preference synthesis, pool
//!   selection and split assignment,
//! - [`embed`] — deterministic tokenization, feature-hashed sentence
//!   vectors, and a trainable token-embedding table,
//! - [`nn`] — a minimal dense-network substrate with reverse-mode
//!   gradients and AdamW,
//! - [`routers`] — four win-rate estimators with median-threshold
//!   calibration,
//! - [`attacks`] — gray-box, white-box, and box-free trigger optimization
//!   plus the two adaptive variants,
//! - [`guard`] — the siamese pair detector trained with BCE + supervised
//!   contrastive loss and deployed by K-reference majority vote,
//! - [`baselines`] — perplexity filtering and multi-router voting,
//! - [`metrics`] — ASR, ACG, selection rate, simulated benchmark scores,
//!   detection metrics, PCA, and CDF tables,
//! - [`pipeline`] — end-to-end experiment stages with hashed artifacts.
//!
//! Batch evaluation uses rayon when the `parallel` feature (default) is
//! enabled; disabling it yields a fully sequential build with identical
//! output bytes.

pub mod attacks;
pub mod baselines;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod guard;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod routers;
pub mod seeding;

pub use error::{Error, Result};

/// Version tag recorded in generated artifacts.
pub const GENERATOR_VERSION: &str = concat!("routelab-", env!("CARGO_PKG_VERSION"));

/// Verdict of a filtering defense on one query.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Block,
    Forward,
}
