//! Pair-dataset construction for the detector.
//!
//! Each normal sample yields one positive and one negative pair. Positive
//! kinds alternate deterministically between normal-normal and
//! adversarial-adversarial; negatives are cross-index with probability
//! `negative_cross_ratio`, otherwise the hard self-index pairing of a
//! query with its own adversarial variant. Cross-domain pair orientation
//! alternates so both orders appear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_adversarial, Query, Trigger};
use crate::error::{Error, Result};
use crate::seeding::derive_rng;

use super::GuardConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    NormNorm,
    AdvAdv,
    CrossNegative,
    SelfNegative,
}

impl PairKind {
    pub fn is_positive(&self) -> bool {
        matches!(self, PairKind::NormNorm | PairKind::AdvAdv)
    }
}

/// Two queries plus a same-class/cross-class label: 0 for positive pairs,
/// 1 for negative pairs, derived from the kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryPair {
    pub a: Query,
    pub b: Query,
    pub y: u8,
    pub kind: PairKind,
}

impl QueryPair {
    pub fn new(a: Query, b: Query, kind: PairKind) -> Self {
        QueryPair {
            y: if kind.is_positive() { 0 } else { 1 },
            a,
            b,
            kind,
        }
    }
}

/// Base query id of an adversarial variant (`qid::tid` becomes `qid`).
fn base_id(id: &str) -> &str {
    id.split("::").next().unwrap_or(id)
}

/// Build the adversarial counterpart of a normal split: every query gets
/// one trigger sampled from the matching trigger split, index-aligned
/// with its source.
pub fn build_adversarial_split(
    normal: &[Query],
    triggers: &[Trigger],
    seed: u64,
) -> Result<Vec<Query>> {
    if normal.is_empty() || triggers.is_empty() {
        return Err(Error::EmptyInput("adversarial split inputs".into()));
    }
    let split = normal[0].split;
    if normal.iter().any(|q| q.split != split) {
        return Err(Error::invalid("normal queries span multiple splits"));
    }
    if triggers.iter().any(|t| t.split != split) {
        return Err(Error::invalid(
            "trigger split does not match the query split",
        ));
    }
    normal
        .iter()
        .map(|q| {
            let mut rng = derive_rng(seed, &format!("adv:{}", q.id), 0);
            let t = &triggers[rng.gen_range(0..triggers.len())];
            make_adversarial(q, t)
        })
        .collect()
}

/// One positive and one negative pair per normal sample; `d_adv` must be
/// index-aligned with `d_normal` (as `build_adversarial_split` returns).
pub fn build_pair_dataset(
    d_normal: &[Query],
    d_adv: &[Query],
    cfg: &GuardConfig,
    seed: u64,
) -> Result<Vec<QueryPair>> {
    cfg.validate()?;
    if d_normal.is_empty() {
        return Err(Error::EmptyInput("normal split".into()));
    }
    if d_normal.len() != d_adv.len() {
        return Err(Error::dim(d_normal.len(), d_adv.len(), "pair dataset"));
    }
    if d_normal.len() < 2 {
        return Err(Error::invalid("need at least 2 normal samples for pairs"));
    }
    for (q, a) in d_normal.iter().zip(d_adv.iter()) {
        if base_id(&a.id) != q.id {
            return Err(Error::invalid(format!(
                "adversarial split is not aligned: {} vs {}",
                a.id, q.id
            )));
        }
    }
    let n = d_normal.len();
    let mut pairs = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut rng = derive_rng(seed, &format!("pair:{}", d_normal[i].id), 0);
        let other = |rng: &mut rand_chacha::ChaCha8Rng| {
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            j
        };

        // Positive pair: alternate the kind per sample index.
        let j = other(&mut rng);
        if i % 2 == 0 {
            pairs.push(QueryPair::new(
                d_normal[i].clone(),
                d_normal[j].clone(),
                PairKind::NormNorm,
            ));
        } else {
            pairs.push(QueryPair::new(
                d_adv[i].clone(),
                d_adv[j].clone(),
                PairKind::AdvAdv,
            ));
        }

        // Negative pair: cross-index or the self-index hard case, with
        // alternating orientation so both orders are seen.
        let cross = rng.gen::<f64>() < cfg.negative_cross_ratio;
        let (kind, adv) = if cross {
            let j = other(&mut rng);
            (PairKind::CrossNegative, d_adv[j].clone())
        } else {
            (PairKind::SelfNegative, d_adv[i].clone())
        };
        let normal = d_normal[i].clone();
        if i % 2 == 0 {
            pairs.push(QueryPair::new(normal, adv, kind));
        } else {
            pairs.push(QueryPair::new(adv, normal, kind));
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Complexity, Split, TriggerMethod};

    fn normal_split(n: usize) -> Vec<Query> {
        (0..n)
            .map(|i| Query {
                id: format!("q{i:04}"),
                text: format!("what is item number {i}"),
                complexity: Complexity::Simple,
                origin: "synthetic".into(),
                split: Split::Train,
            })
            .collect()
    }

    fn triggers(n: usize) -> Vec<Trigger> {
        (0..n)
            .map(|i| Trigger {
                id: format!("t-graybox-{i:03}"),
                method: TriggerMethod::GrayBox,
                text: format!("zz qq trigger {i}"),
                split: Split::Train,
            })
            .collect()
    }

    #[test]
    fn two_pairs_per_sample_half_positive() {
        let normal = normal_split(20);
        let adv = build_adversarial_split(&normal, &triggers(5), 3).unwrap();
        let cfg = GuardConfig::default();
        let pairs = build_pair_dataset(&normal, &adv, &cfg, 4).unwrap();
        assert_eq!(pairs.len(), 40);
        assert_eq!(pairs.iter().filter(|p| p.y == 0).count(), 20);
        assert_eq!(pairs.iter().filter(|p| p.y == 1).count(), 20);
        // Label soundness over the whole set.
        for p in &pairs {
            assert_eq!(p.y == 0, p.kind.is_positive());
            if p.kind == PairKind::SelfNegative {
                let (norm, adv) = if p.a.origin.starts_with("adv:") {
                    (&p.b, &p.a)
                } else {
                    (&p.a, &p.b)
                };
                assert_eq!(base_id(&adv.id), norm.id);
            }
        }
        // Both cross-domain orientations occur.
        let adv_first = pairs
            .iter()
            .filter(|p| p.y == 1 && p.a.origin.starts_with("adv:"))
            .count();
        let norm_first = pairs
            .iter()
            .filter(|p| p.y == 1 && !p.a.origin.starts_with("adv:"))
            .count();
        assert!(adv_first > 0 && norm_first > 0);
    }

    #[test]
    fn zero_cross_ratio_gives_only_self_negatives() {
        let normal = normal_split(12);
        let adv = build_adversarial_split(&normal, &triggers(4), 3).unwrap();
        let cfg = GuardConfig {
            negative_cross_ratio: 0.0,
            ..GuardConfig::default()
        };
        let pairs = build_pair_dataset(&normal, &adv, &cfg, 4).unwrap();
        assert!(pairs
            .iter()
            .filter(|p| p.y == 1)
            .all(|p| p.kind == PairKind::SelfNegative));
    }

    #[test]
    fn cross_fraction_tracks_the_ratio() {
        let normal = normal_split(10_000);
        let adv = build_adversarial_split(&normal, &triggers(10), 3).unwrap();
        let cfg = GuardConfig::default();
        let pairs = build_pair_dataset(&normal, &adv, &cfg, 4).unwrap();
        let negatives: Vec<_> = pairs.iter().filter(|p| p.y == 1).collect();
        let cross = negatives
            .iter()
            .filter(|p| p.kind == PairKind::CrossNegative)
            .count();
        let frac = cross as f64 / negatives.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "cross fraction {frac}");
    }

    #[test]
    fn deterministic_per_seed() {
        let normal = normal_split(30);
        let adv = build_adversarial_split(&normal, &triggers(6), 3).unwrap();
        let cfg = GuardConfig::default();
        let a = build_pair_dataset(&normal, &adv, &cfg, 4).unwrap();
        let b = build_pair_dataset(&normal, &adv, &cfg, 4).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn split_mismatch_is_rejected() {
        let normal = normal_split(5);
        let mut t = triggers(3);
        t[0].split = Split::Val;
        assert!(build_adversarial_split(&normal, &t, 3).is_err());
        let adv = build_adversarial_split(&normal, &triggers(3), 3).unwrap();
        assert!(build_pair_dataset(&normal, &adv[..4], &GuardConfig::default(), 1).is_err());
        assert!(build_pair_dataset(&[], &[], &GuardConfig::default(), 1).is_err());
    }
}
