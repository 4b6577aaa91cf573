//! Trainable routers: the 3-way outcome classifier, the bilinear
//! matrix-factorization scorer, and the 1–5 score classifier.
//!
//! All three consume the mean-pooled trainable token embedding of the
//! query, which is what makes them differentiable for gradient-guided
//! attacks. The token table sits in the Backbone parameter group, the
//! scoring head in the Head group.

use serde::{Deserialize, Deserializer, Serialize};

use crate::corpus::{Outcome, PreferenceRecord, Query};
use crate::embed::{EmbeddingTable, Vocab, TOKEN_DIM};
use crate::error::{Error, Result};
use crate::nn::{
    bce_with_logit, clip_scale, global_grad_norm, sigmoid, softmax, softmax_cross_entropy,
    softmax_subset_grad, Activation, AdamW, DenseNet, Group, NetGrads, TrainConfig,
};
use crate::routers::{
    DifferentiableRouter, ModelChoice, Router, ScoreThresholdTau, SwRouter, WinRate,
};
use crate::seeding::{derive_rng, derive_seed};
use rand::Rng;

/// Hidden width of the classifier heads.
const HEAD_HIDDEN: usize = 64;
/// Latent dimension of the bilinear scorer.
const MF_LATENT: usize = 16;
/// Probability that a synthetic 1–5 judge score lands in the other range.
const SCORE_NOISE: f64 = 0.1;

fn vocab_with_index<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vocab, D::Error> {
    let mut v = Vocab::deserialize(d)?;
    v.rebuild_index();
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterKind {
    Cls,
    Mf,
    Sw,
    Llm,
}

impl RouterKind {
    pub const ALL: [RouterKind; 4] = [
        RouterKind::Cls,
        RouterKind::Mf,
        RouterKind::Sw,
        RouterKind::Llm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RouterKind::Cls => "r_cls",
            RouterKind::Mf => "r_mf",
            RouterKind::Sw => "r_sw",
            RouterKind::Llm => "r_llm",
        }
    }
}

// ── 3-way outcome classifier ───────────────────────────────────────────

/// Softmax head over [strong wins, tie, weak wins]; the win rate is the
/// strong-win mass only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClsRouter {
    pub id: String,
    #[serde(deserialize_with = "vocab_with_index")]
    pub vocab: Vocab,
    pub table: EmbeddingTable,
    pub net: DenseNet,
}

impl ClsRouter {
    fn pooled(&self, text: &str) -> Result<Vec<f64>> {
        let seq = self.vocab.tokenize(text);
        self.table.mean_pool(&seq.tokens)
    }

    pub fn class_probs(&self, text: &str) -> Result<Vec<f64>> {
        let (logits, _) = self.net.forward(&self.pooled(text)?)?;
        Ok(softmax(&logits))
    }
}

impl Router for ClsRouter {
    fn id(&self) -> &str {
        &self.id
    }

    fn win_rate(&self, text: &str) -> Result<WinRate> {
        WinRate::new(self.win_rate_pooled(&self.pooled(text)?)?)
    }
}

impl DifferentiableRouter for ClsRouter {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    fn win_rate_pooled(&self, pooled: &[f64]) -> Result<f64> {
        let (logits, _) = self.net.forward(pooled)?;
        Ok(softmax(&logits)[0])
    }

    fn target_prob_grad_pooled(
        &self,
        pooled: &[f64],
        target: ModelChoice,
    ) -> Result<(f64, Vec<f64>)> {
        let (logits, cache) = self.net.forward(pooled)?;
        let p = softmax(&logits);
        let mut dlogits = softmax_subset_grad(&p, &[true, false, false]);
        let prob = match target {
            ModelChoice::Strong => p[0],
            ModelChoice::Weak => {
                dlogits.iter_mut().for_each(|g| *g = -*g);
                1.0 - p[0]
            }
        };
        let mut grads = NetGrads::zeros_like(&self.net);
        let g_pooled = self.net.backward(&cache, &dlogits, &mut grads)?;
        Ok((prob, g_pooled))
    }
}

// ── Bilinear matrix-factorization scorer ───────────────────────────────

/// `delta(M, q) = m_M^T W e_q + b_M`; win rate is the sigmoid of the
/// strong-weak score difference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfRouter {
    pub id: String,
    #[serde(deserialize_with = "vocab_with_index")]
    pub vocab: Vocab,
    pub table: EmbeddingTable,
    /// Row-major `MF_LATENT x TOKEN_DIM`.
    pub w: Vec<f64>,
    pub latent: usize,
    pub m_strong: Vec<f64>,
    pub m_weak: Vec<f64>,
    pub b_strong: f64,
    pub b_weak: f64,
}

impl MfRouter {
    fn pooled(&self, text: &str) -> Result<Vec<f64>> {
        let seq = self.vocab.tokenize(text);
        self.table.mean_pool(&seq.tokens)
    }

    fn project(&self, e: &[f64]) -> Vec<f64> {
        let d = e.len();
        (0..self.latent)
            .map(|i| {
                self.w[i * d..(i + 1) * d]
                    .iter()
                    .zip(e.iter())
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect()
    }

    /// Strong-minus-weak score difference; the win rate is strictly
    /// increasing in this value.
    pub fn score_difference(&self, e: &[f64]) -> f64 {
        let we = self.project(e);
        let ds: f64 = self
            .m_strong
            .iter()
            .zip(we.iter())
            .map(|(m, x)| m * x)
            .sum::<f64>()
            + self.b_strong;
        let dw: f64 = self
            .m_weak
            .iter()
            .zip(we.iter())
            .map(|(m, x)| m * x)
            .sum::<f64>()
            + self.b_weak;
        ds - dw
    }
}

impl Router for MfRouter {
    fn id(&self) -> &str {
        &self.id
    }

    fn win_rate(&self, text: &str) -> Result<WinRate> {
        WinRate::new(self.win_rate_pooled(&self.pooled(text)?)?)
    }
}

impl DifferentiableRouter for MfRouter {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    fn win_rate_pooled(&self, pooled: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.score_difference(pooled)))
    }

    fn target_prob_grad_pooled(
        &self,
        pooled: &[f64],
        target: ModelChoice,
    ) -> Result<(f64, Vec<f64>)> {
        let z = self.score_difference(pooled);
        let p = sigmoid(z);
        // dz/de = W^T (m_s - m_w)
        let d = pooled.len();
        let mut dz_de = vec![0.0; d];
        for i in 0..self.latent {
            let coeff = self.m_strong[i] - self.m_weak[i];
            for (g, w) in dz_de.iter_mut().zip(self.w[i * d..(i + 1) * d].iter()) {
                *g += coeff * w;
            }
        }
        let sig_grad = p * (1.0 - p);
        match target {
            ModelChoice::Strong => {
                dz_de.iter_mut().for_each(|g| *g *= sig_grad);
                Ok((p, dz_de))
            }
            ModelChoice::Weak => {
                dz_de.iter_mut().for_each(|g| *g *= -sig_grad);
                Ok((1.0 - p, dz_de))
            }
        }
    }
}

// ── 1–5 score classifier ───────────────────────────────────────────────

/// Predicts the weak model's quality score on a 1–5 scale; the win rate
/// is the probability mass strictly below the threshold score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmRouter {
    pub id: String,
    #[serde(deserialize_with = "vocab_with_index")]
    pub vocab: Vocab,
    pub table: EmbeddingTable,
    pub net: DenseNet,
    pub tau: ScoreThresholdTau,
}

impl LlmRouter {
    fn pooled(&self, text: &str) -> Result<Vec<f64>> {
        let seq = self.vocab.tokenize(text);
        self.table.mean_pool(&seq.tokens)
    }

    fn below_tau_mask(&self) -> [bool; 5] {
        let mut mask = [false; 5];
        for (i, m) in mask.iter_mut().enumerate() {
            // score i+1 counts when it is strictly below tau
            *m = (i + 1) < self.tau.get() as usize;
        }
        mask
    }

    /// Win rate from explicit score probabilities: `1 - sum_{i>=tau} p_i`.
    pub fn win_rate_from_scores(probs: &[f64; 5], tau: ScoreThresholdTau) -> f64 {
        let above: f64 = probs[(tau.get() as usize - 1)..].iter().sum();
        1.0 - above
    }
}

impl Router for LlmRouter {
    fn id(&self) -> &str {
        &self.id
    }

    fn win_rate(&self, text: &str) -> Result<WinRate> {
        WinRate::new(self.win_rate_pooled(&self.pooled(text)?)?.clamp(0.0, 1.0))
    }
}

impl DifferentiableRouter for LlmRouter {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    fn win_rate_pooled(&self, pooled: &[f64]) -> Result<f64> {
        let (logits, _) = self.net.forward(pooled)?;
        let p = softmax(&logits);
        let mask = self.below_tau_mask();
        Ok(p.iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(p, _)| p)
            .sum())
    }

    fn target_prob_grad_pooled(
        &self,
        pooled: &[f64],
        target: ModelChoice,
    ) -> Result<(f64, Vec<f64>)> {
        let (logits, cache) = self.net.forward(pooled)?;
        let p = softmax(&logits);
        let mask = self.below_tau_mask();
        let win: f64 = p
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|(p, _)| p)
            .sum();
        let mut dlogits = softmax_subset_grad(&p, &mask);
        let prob = match target {
            ModelChoice::Strong => win,
            ModelChoice::Weak => {
                dlogits.iter_mut().for_each(|g| *g = -*g);
                1.0 - win
            }
        };
        let mut grads = NetGrads::zeros_like(&self.net);
        let g_pooled = self.net.backward(&cache, &dlogits, &mut grads)?;
        Ok((prob, g_pooled))
    }
}

// ── Training ───────────────────────────────────────────────────────────

fn outcome_map(corpus: &[Query], prefs: &[PreferenceRecord]) -> Result<Vec<Outcome>> {
    let lookup: std::collections::HashMap<&str, Outcome> = prefs
        .iter()
        .map(|p| (p.query_id.as_str(), p.outcome))
        .collect();
    corpus
        .iter()
        .map(|q| {
            lookup.get(q.id.as_str()).copied().ok_or_else(|| {
                Error::invalid(format!("preferences do not cover query {}", q.id))
            })
        })
        .collect()
}

struct SoftmaxTrainer {
    table: EmbeddingTable,
    net: DenseNet,
}

/// Shared CE training loop for the classifier heads (token table is the
/// backbone slot, net layers are head slots).
fn train_softmax_head(
    name: &str,
    token_seqs: &[Vec<usize>],
    labels: &[usize],
    vocab: &Vocab,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<SoftmaxTrainer> {
    cfg.validate()?;
    if token_seqs.is_empty() {
        return Err(Error::EmptyInput(format!("{name} training data")));
    }
    let mut table = EmbeddingTable::init(
        vocab.len(),
        TOKEN_DIM,
        derive_seed(cfg.seed, &format!("{name}-table"), 0),
    );
    let mut net = DenseNet::init(
        &[
            (TOKEN_DIM, HEAD_HIDDEN, Activation::Relu, Group::Head),
            (HEAD_HIDDEN, num_classes, Activation::Identity, Group::Head),
        ],
        derive_seed(cfg.seed, &format!("{name}-net"), 0),
    );
    // slots: [w0, b0, w1, b1, table]
    let mut opt = AdamW::new(5);
    let n = token_seqs.len();
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = derive_rng(cfg.seed, &format!("{name}-epoch"), epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut net_grads = NetGrads::zeros_like(&net);
            let mut table_grads = vec![0.0; table.rows.len()];
            for &idx in batch {
                let pooled = table.mean_pool(&token_seqs[idx])?;
                let (logits, cache) = net.forward(&pooled)?;
                let (_, dlogits) = softmax_cross_entropy(&logits, labels[idx]);
                let g_pooled = net.backward(&cache, &dlogits, &mut net_grads)?;
                table.accumulate_pool_grad(&token_seqs[idx], &g_pooled, &mut table_grads);
            }
            let inv = 1.0 / batch.len() as f64;
            net_grads.scale(inv);
            table_grads.iter_mut().for_each(|g| *g *= inv);

            let norm = global_grad_norm(
                net_grads
                    .w
                    .iter()
                    .map(|v| v.as_slice())
                    .chain(net_grads.b.iter().map(|v| v.as_slice()))
                    .chain(std::iter::once(table_grads.as_slice())),
            );
            let scale = clip_scale(norm, cfg.clip_norm);
            opt.begin_step();
            let head = cfg.group(Group::Head);
            let backbone = cfg.group(Group::Backbone);
            for l in 0..net.layers.len() {
                opt.apply(2 * l, &mut net.layers[l].w, &net_grads.w[l], head, scale)?;
                opt.apply(2 * l + 1, &mut net.layers[l].b, &net_grads.b[l], head, scale)?;
            }
            opt.apply(4, &mut table.rows, &table_grads, backbone, scale)?;
        }
    }
    Ok(SoftmaxTrainer { table, net })
}

fn train_cls(
    corpus: &[Query],
    outcomes: &[Outcome],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<ClsRouter> {
    let token_seqs: Vec<Vec<usize>> = corpus.iter().map(|q| vocab.tokenize(&q.text).tokens).collect();
    let labels: Vec<usize> = outcomes
        .iter()
        .map(|o| match o {
            Outcome::StrongWins => 0,
            Outcome::Tie => 1,
            Outcome::WeakWins => 2,
        })
        .collect();
    let trained = train_softmax_head("r_cls", &token_seqs, &labels, vocab, 3, cfg)?;
    Ok(ClsRouter {
        id: RouterKind::Cls.as_str().to_string(),
        vocab: vocab.clone(),
        table: trained.table,
        net: trained.net,
    })
}

fn train_llm(
    corpus: &[Query],
    outcomes: &[Outcome],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<LlmRouter> {
    let token_seqs: Vec<Vec<usize>> = corpus.iter().map(|q| vocab.tokenize(&q.text).tokens).collect();
    // Synthetic 1-5 judge scores for the weak model: a strong win means
    // the weak answer scored low (1-3), otherwise high (4-5), with a
    // small chance of landing in the other range.
    let labels: Vec<usize> = corpus
        .iter()
        .zip(outcomes.iter())
        .map(|(q, o)| {
            let mut rng = derive_rng(cfg.seed, &format!("llm-score:{}", q.id), 0);
            let low_range = matches!(o, Outcome::StrongWins) ^ (rng.gen::<f64>() < SCORE_NOISE);
            let score = if low_range {
                rng.gen_range(1..=3u8)
            } else {
                rng.gen_range(4..=5u8)
            };
            (score - 1) as usize
        })
        .collect();
    let trained = train_softmax_head("r_llm", &token_seqs, &labels, vocab, 5, cfg)?;
    Ok(LlmRouter {
        id: RouterKind::Llm.as_str().to_string(),
        vocab: vocab.clone(),
        table: trained.table,
        net: trained.net,
        tau: ScoreThresholdTau::default(),
    })
}

fn train_mf(
    corpus: &[Query],
    outcomes: &[Outcome],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<MfRouter> {
    cfg.validate()?;
    let token_seqs: Vec<Vec<usize>> = corpus.iter().map(|q| vocab.tokenize(&q.text).tokens).collect();
    let targets: Vec<f64> = outcomes
        .iter()
        .map(|o| match o {
            Outcome::StrongWins => 1.0,
            Outcome::Tie => 0.5,
            Outcome::WeakWins => 0.0,
        })
        .collect();

    let mut table = EmbeddingTable::init(vocab.len(), TOKEN_DIM, derive_seed(cfg.seed, "r_mf-table", 0));
    let mut rng = derive_rng(cfg.seed, "r_mf-init", 0);
    let scale0 = 1.0 / (TOKEN_DIM as f64).sqrt();
    let mut w: Vec<f64> = (0..MF_LATENT * TOKEN_DIM)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale0)
        .collect();
    let mut m_strong: Vec<f64> = (0..MF_LATENT).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * 0.5).collect();
    let mut m_weak: Vec<f64> = (0..MF_LATENT).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * 0.5).collect();
    let mut b_strong = 0.0f64;
    let mut b_weak = 0.0f64;

    // slots: [w, m_s, m_w, b_s, b_w, table]
    let mut opt = AdamW::new(6);
    let n = token_seqs.len();
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut erng = derive_rng(cfg.seed, "r_mf-epoch", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = erng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = vec![0.0; w.len()];
            let mut gms = vec![0.0; MF_LATENT];
            let mut gmw = vec![0.0; MF_LATENT];
            let mut gbs = 0.0;
            let mut gbw = 0.0;
            let mut gtable = vec![0.0; table.rows.len()];
            for &idx in batch {
                let e = table.mean_pool(&token_seqs[idx])?;
                let we: Vec<f64> = (0..MF_LATENT)
                    .map(|i| {
                        w[i * TOKEN_DIM..(i + 1) * TOKEN_DIM]
                            .iter()
                            .zip(e.iter())
                            .map(|(wi, xi)| wi * xi)
                            .sum()
                    })
                    .collect();
                let ds: f64 = m_strong.iter().zip(&we).map(|(m, x)| m * x).sum::<f64>() + b_strong;
                let dw_: f64 = m_weak.iter().zip(&we).map(|(m, x)| m * x).sum::<f64>() + b_weak;
                let (_, _, dz) = bce_with_logit(ds - dw_, targets[idx]);
                gbs += dz;
                gbw -= dz;
                let mut g_we = vec![0.0; MF_LATENT];
                for i in 0..MF_LATENT {
                    gms[i] += dz * we[i];
                    gmw[i] -= dz * we[i];
                    g_we[i] = dz * (m_strong[i] - m_weak[i]);
                }
                let mut g_e = vec![0.0; TOKEN_DIM];
                for i in 0..MF_LATENT {
                    for j in 0..TOKEN_DIM {
                        gw[i * TOKEN_DIM + j] += g_we[i] * e[j];
                        g_e[j] += g_we[i] * w[i * TOKEN_DIM + j];
                    }
                }
                table.accumulate_pool_grad(&token_seqs[idx], &g_e, &mut gtable);
            }
            let inv = 1.0 / batch.len() as f64;
            for g in gw.iter_mut().chain(gms.iter_mut()).chain(gmw.iter_mut()) {
                *g *= inv;
            }
            gbs *= inv;
            gbw *= inv;
            gtable.iter_mut().for_each(|g| *g *= inv);

            let gbs_v = [gbs];
            let gbw_v = [gbw];
            let norm = global_grad_norm([
                gw.as_slice(),
                gms.as_slice(),
                gmw.as_slice(),
                &gbs_v,
                &gbw_v,
                gtable.as_slice(),
            ]);
            let scale = clip_scale(norm, cfg.clip_norm);
            let head = cfg.group(Group::Head);
            let backbone = cfg.group(Group::Backbone);
            opt.begin_step();
            opt.apply(0, &mut w, &gw, head, scale)?;
            opt.apply(1, &mut m_strong, &gms, head, scale)?;
            opt.apply(2, &mut m_weak, &gmw, head, scale)?;
            let mut bs = [b_strong];
            opt.apply(3, &mut bs, &gbs_v, head, scale)?;
            b_strong = bs[0];
            let mut bw = [b_weak];
            opt.apply(4, &mut bw, &gbw_v, head, scale)?;
            b_weak = bw[0];
            opt.apply(5, &mut table.rows, &gtable, backbone, scale)?;
        }
    }
    Ok(MfRouter {
        id: RouterKind::Mf.as_str().to_string(),
        vocab: vocab.clone(),
        table,
        w,
        latent: MF_LATENT,
        m_strong,
        m_weak,
        b_strong,
        b_weak,
    })
}

/// Train a router of the given kind; the similarity-weighted router is
/// training-free and only indexes the preference store.
pub fn train_router(
    kind: RouterKind,
    corpus: &[Query],
    prefs: &[PreferenceRecord],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<super::AnyRouter> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus".into()));
    }
    let outcomes = outcome_map(corpus, prefs)?;
    Ok(match kind {
        RouterKind::Cls => super::AnyRouter::Cls(train_cls(corpus, &outcomes, vocab, cfg)?),
        RouterKind::Mf => super::AnyRouter::Mf(train_mf(corpus, &outcomes, vocab, cfg)?),
        RouterKind::Llm => super::AnyRouter::Llm(train_llm(corpus, &outcomes, vocab, cfg)?),
        RouterKind::Sw => super::AnyRouter::Sw(SwRouter::from_corpus(
            corpus,
            prefs,
            super::sw::DEFAULT_K_RETRIEVE,
            crate::embed::HASH_DIM,
        )?),
    })
}
