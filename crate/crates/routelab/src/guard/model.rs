//! The siamese detector: shared encoder, projection head onto the unit
//! sphere, and a pair classifier over combined pair features.

use serde::{Deserialize, Serialize};

use crate::embed::{embed_hashed, l2_norm};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, Activation, DenseNet, ForwardCache, Group};
use crate::seeding::derive_seed;

use super::GuardConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiameseModel {
    pub encoder: DenseNet,
    pub proj: DenseNet,
    pub clf: DenseNet,
    pub hash_dim: usize,
    pub embed_dim: usize,
}

/// Activations cached while encoding one side of a pair.
#[derive(Debug, Clone)]
pub struct EncodeCache {
    pub enc: ForwardCache,
    pub proj: ForwardCache,
    pub pre_norm: Vec<f64>,
    pub norm: f64,
    pub embedding: Vec<f64>,
}

impl SiameseModel {
    pub fn init(cfg: &GuardConfig, seed: u64) -> Self {
        let encoder = DenseNet::init(
            &[
                (
                    cfg.hash_dim,
                    cfg.encoder_hidden,
                    Activation::Relu,
                    Group::Backbone,
                ),
                (
                    cfg.encoder_hidden,
                    cfg.encoder_out,
                    Activation::Relu,
                    Group::Backbone,
                ),
            ],
            derive_seed(seed, "guard-encoder", 0),
        );
        let proj = DenseNet::init(
            &[(cfg.encoder_out, cfg.embed_dim, Activation::Identity, Group::Head)],
            derive_seed(seed, "guard-proj", 0),
        );
        let clf = DenseNet::init(
            &[
                (4 * cfg.embed_dim, cfg.clf_hidden, Activation::Relu, Group::Head),
                (cfg.clf_hidden, 1, Activation::Identity, Group::Head),
            ],
            derive_seed(seed, "guard-clf", 0),
        );
        SiameseModel {
            encoder,
            proj,
            clf,
            hash_dim: cfg.hash_dim,
            embed_dim: cfg.embed_dim,
        }
    }

    /// Encode a hashed sentence vector into a unit embedding, keeping the
    /// caches the backward pass needs.
    pub fn encode_cached(&self, hashed: &[f64]) -> Result<EncodeCache> {
        let (h, enc) = self.encoder.forward(hashed)?;
        let (z, proj) = self.proj.forward(&h)?;
        let norm = l2_norm(&z).max(1e-12);
        let embedding: Vec<f64> = z.iter().map(|x| x / norm).collect();
        Ok(EncodeCache {
            enc,
            proj,
            pre_norm: z,
            norm,
            embedding,
        })
    }

    /// Unit embedding of a query text.
    pub fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let hashed = embed_hashed(text, self.hash_dim);
        Ok(self.encode_cached(&hashed)?.embedding)
    }

    /// Pair features `[e_a ; e_b ; |e_a - e_b| ; e_a .* e_b]`.
    pub fn pair_features(e_a: &[f64], e_b: &[f64]) -> Vec<f64> {
        let d = e_a.len();
        let mut f = Vec::with_capacity(4 * d);
        f.extend_from_slice(e_a);
        f.extend_from_slice(e_b);
        for i in 0..d {
            f.push((e_a[i] - e_b[i]).abs());
        }
        for i in 0..d {
            f.push(e_a[i] * e_b[i]);
        }
        f
    }

    /// Split a feature gradient back onto the two embeddings.
    pub fn pair_features_backward(
        e_a: &[f64],
        e_b: &[f64],
        g_feat: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let d = e_a.len();
        let mut g_a = g_feat[..d].to_vec();
        let mut g_b = g_feat[d..2 * d].to_vec();
        for i in 0..d {
            let diff = e_a[i] - e_b[i];
            // subgradient 0 at the kink
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            g_a[i] += g_feat[2 * d + i] * s;
            g_b[i] -= g_feat[2 * d + i] * s;
            g_a[i] += g_feat[3 * d + i] * e_b[i];
            g_b[i] += g_feat[3 * d + i] * e_a[i];
        }
        (g_a, g_b)
    }

    /// Probability that a pair is negative (adversarial vs. normal).
    pub fn classify_pair(&self, e_a: &[f64], e_b: &[f64]) -> Result<f64> {
        if e_a.len() != self.embed_dim || e_b.len() != self.embed_dim {
            return Err(Error::dim(self.embed_dim, e_a.len().max(e_b.len()), "pair"));
        }
        let f = Self::pair_features(e_a, e_b);
        let (logit, _) = self.clf.forward(&f)?;
        Ok(sigmoid(logit[0]))
    }

    /// Classifier logit plus its forward cache, for training.
    pub fn classify_pair_cached(&self, e_a: &[f64], e_b: &[f64]) -> Result<(f64, ForwardCache)> {
        let f = Self::pair_features(e_a, e_b);
        let (logit, cache) = self.clf.forward(&f)?;
        Ok((logit[0], cache))
    }

    /// Adversarial probability of a query: the mean pair probability
    /// against the reference embeddings.
    pub fn guard_prob(&self, text: &str, reference_embeddings: &[Vec<f64>]) -> Result<f64> {
        if reference_embeddings.is_empty() {
            return Err(Error::EmptyInput("guard references".into()));
        }
        let e_q = self.encode(text)?;
        let mut sum = 0.0;
        for r in reference_embeddings {
            sum += self.classify_pair(&e_q, r)?;
        }
        Ok(sum / reference_embeddings.len() as f64)
    }
}
