//! Majority-vote deployment: pair a new query with K benign references
//! and block when a strict majority of pair verdicts is adversarial.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::seeding::derive_rng;
use crate::GateDecision;

use super::model::SiameseModel;

/// One decision-log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub query_id: String,
    pub adv_votes: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub decision: GateDecision,
    pub pair_probs: Vec<f64>,
}

/// Deterministically pick K reference indices for `(seed, query_id)`;
/// falls back to sampling with replacement when the pool is smaller
/// than K.
pub fn reference_indices(pool_len: usize, k: usize, seed: u64, query_id: &str) -> Vec<usize> {
    let mut rng = derive_rng(seed, &format!("deploy:{query_id}"), 0);
    if pool_len >= k {
        let mut idx: Vec<usize> = (0..pool_len).collect();
        for i in 0..k {
            let j = rng.gen_range(i..pool_len);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    } else {
        log::warn!("reference pool ({pool_len}) smaller than K={k}; sampling with replacement");
        (0..k).map(|_| rng.gen_range(0..pool_len)).collect()
    }
}

/// Block iff `adv_votes > K/2` (strict; an even split forwards).
pub fn deploy_vote(
    model: &SiameseModel,
    query: &Query,
    reference_pool: &[Query],
    k: usize,
    seed: u64,
) -> Result<(GateDecision, VoteRecord)> {
    if reference_pool.is_empty() {
        return Err(Error::EmptyInput("reference pool".into()));
    }
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    let e_q = model.encode(&query.text)?;
    let mut pair_probs = Vec::with_capacity(k);
    for idx in reference_indices(reference_pool.len(), k, seed, &query.id) {
        let e_r = model.encode(&reference_pool[idx].text)?;
        pair_probs.push(model.classify_pair(&e_q, &e_r)?);
    }
    let adv_votes = pair_probs.iter().filter(|&&p| p > 0.5).count();
    let decision = if adv_votes * 2 > k {
        GateDecision::Block
    } else {
        GateDecision::Forward
    };
    let record = VoteRecord {
        query_id: query.id.clone(),
        adv_votes,
        k,
        decision,
        pair_probs,
    };
    Ok((decision, record))
}
