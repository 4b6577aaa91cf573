//! Rerouting-prompt detector: pair dataset construction, a siamese
//! encoder/classifier trained with BCE plus weighted supervised
//! contrastive loss, and K-reference majority-vote deployment.

mod deploy;
mod losses;
mod model;
mod pairs;
mod train;

pub use deploy::{deploy_vote, VoteRecord};
pub use losses::{
    bce_loss, composite_loss, contrastive_ramp, supcon_loss, supcon_loss_grad, PairWeights,
    SupConResult,
};
pub use model::{EncodeCache, SiameseModel};
pub use pairs::{build_adversarial_split, build_pair_dataset, PairKind, QueryPair};
pub use train::{
    evaluate_pair_f1, train_guard, train_single_query_baseline, SingleQueryDetector,
    TrainedGuard,
};

use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::nn::TrainConfig;

/// Hyperparameters of the detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuardConfig {
    pub lambda_bce: f64,
    pub lambda_contr: f64,
    pub temperature: f64,
    pub hard_negative_weight: f64,
    pub negative_cross_ratio: f64,
    pub k_references: usize,
    pub hash_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_out: usize,
    pub embed_dim: usize,
    pub clf_hidden: usize,
    /// Epochs without validation-F1 improvement before stopping.
    pub patience: usize,
    pub train: TrainConfig,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            lambda_bce: 0.65,
            lambda_contr: 0.35,
            temperature: 0.1,
            hard_negative_weight: 1.2,
            negative_cross_ratio: 0.5,
            k_references: 4,
            hash_dim: crate::embed::HASH_DIM,
            encoder_hidden: 128,
            encoder_out: 64,
            embed_dim: 32,
            clf_hidden: 64,
            patience: 3,
            train: TrainConfig {
                warmup_steps: 30,
                max_epochs: 14,
                ..TrainConfig::default()
            },
        }
    }
}

impl GuardConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.lambda_bce + self.lambda_contr - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("lambda_bce + lambda_contr must equal 1"));
        }
        if self.temperature <= 0.0 {
            return Err(Error::invalid("temperature must be > 0"));
        }
        if self.k_references == 0 {
            return Err(Error::invalid("k_references must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.negative_cross_ratio) {
            return Err(Error::invalid("negative_cross_ratio must be in [0,1]"));
        }
        self.train.validate()
    }
}

/// Class label the contrastive loss uses: adversarial queries carry an
/// `adv:` origin tag from `make_adversarial`.
pub fn is_adversarial(query: &Query) -> bool {
    query.origin.starts_with("adv:")
}
