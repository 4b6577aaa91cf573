//! Trigger-optimization attacks: gray-box hill climbing over win-rate
//! feedback, white-box first-order token flipping with exact
//! re-evaluation, the box-free summarizer route, and the two
//! guard-penalized adaptive variants.

mod boxfree;
mod graybox;
mod whitebox;

pub use boxfree::{boxfree_optimize, LogOddsSummarizer, Summarizer};
pub use graybox::{adaptive_graybox, graybox_optimize};
pub use whitebox::{adaptive_whitebox, whitebox_optimize, AdaptiveGuard};

use serde::{Deserialize, Serialize};

use crate::corpus::TriggerMethod;
use crate::error::{Error, Result};
use crate::routers::ModelChoice;

/// Search budget and shape of a trigger-optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub target: ModelChoice,
    /// Trigger length L; the search space is length-L token strings.
    pub trigger_len: usize,
    pub iterations: usize,
    /// Neighbors generated per gray-box iteration.
    pub neighbors_per_step: usize,
    /// Candidates re-evaluated exactly per white-box step.
    pub topk_candidates: usize,
    /// Train queries per white-box batch mean.
    pub batch_size: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(target: ModelChoice, seed: u64) -> Self {
        AttackConfig {
            target,
            trigger_len: 10,
            iterations: 200,
            neighbors_per_step: 32,
            topk_candidates: 8,
            batch_size: 256,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trigger_len == 0 {
            return Err(Error::invalid("trigger_len must be >= 1"));
        }
        if self.topk_candidates == 0 {
            return Err(Error::invalid("topk_candidates must be >= 1"));
        }
        Ok(())
    }

    fn snapshot(&self, vocab_size: usize) -> ConfigSnapshot {
        ConfigSnapshot {
            target: self.target,
            trigger_len: self.trigger_len,
            iterations: self.iterations,
            neighbors_per_step: self.neighbors_per_step,
            topk_candidates: self.topk_candidates,
            batch_size: self.batch_size,
            seed: self.seed,
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub target: ModelChoice,
    pub trigger_len: usize,
    pub iterations: usize,
    pub neighbors_per_step: usize,
    pub topk_candidates: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub vocab_size: usize,
}

/// Per-run record: best objective per iteration plus the final trigger.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackTrace {
    /// Best objective after each iteration (index 0 is the initial value).
    pub objective: Vec<f64>,
    /// White-box: accepted `(position, token)` flips in order.
    pub accepted_flips: Vec<(usize, usize)>,
    pub config: ConfigSnapshot,
}

/// Optimized trigger with provenance, ready for the result file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRunRecord {
    pub method: TriggerMethod,
    pub target: ModelChoice,
    pub trigger: String,
    pub objective_trace: Vec<f64>,
    pub seed: u64,
    pub router: Option<String>,
}

/// Probability assigned to the attack's target model.
pub(crate) fn target_prob(win_rate: f64, target: ModelChoice) -> f64 {
    match target {
        ModelChoice::Strong => win_rate,
        ModelChoice::Weak => 1.0 - win_rate,
    }
}
