//! Similarity-weighted ranking router.
//!
//! Training-free: at inference it retrieves the most similar stored
//! queries by cosine over hashed embeddings and fits a Bradley–Terry
//! coefficient for the strong model by maximizing the similarity-weighted
//! log-likelihood of their recorded outcomes, with the weak coefficient
//! pinned at zero for identifiability.

use serde::{Deserialize, Serialize};

use crate::corpus::{Outcome, PreferenceRecord, Query};
use crate::embed::{cosine, embed_hashed};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::routers::{Router, WinRate};

pub const DEFAULT_K_RETRIEVE: usize = 16;

/// Clamp for the fitted coefficient; unanimous neighborhoods would
/// otherwise push it to infinity.
pub const XI_CLAMP: f64 = 10.0;

/// Fitted Bradley–Terry coefficients; `xi_weak` is pinned to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BtCoefficients {
    pub xi_strong: f64,
    pub xi_weak: f64,
}

impl BtCoefficients {
    pub fn win_rate(&self) -> f64 {
        sigmoid(self.xi_strong - self.xi_weak)
    }
}

/// Maximize `sum_i w_i [c_i ln s(xi) + (1-c_i) ln s(-xi)]` over
/// `xi in [-XI_CLAMP, XI_CLAMP]`, where `c_i` is the strong-win credit
/// (ties count half). Bisection on the monotone derivative.
pub fn fit_bt_weighted(weights: &[f64], outcomes: &[Outcome]) -> Result<BtCoefficients> {
    if weights.len() != outcomes.len() {
        return Err(Error::dim(weights.len(), outcomes.len(), "bt fit"));
    }
    if weights.is_empty() {
        return Err(Error::EmptyInput("bt neighborhood".into()));
    }
    let credits: Vec<f64> = outcomes
        .iter()
        .map(|o| match o {
            Outcome::StrongWins => 1.0,
            Outcome::Tie => 0.5,
            Outcome::WeakWins => 0.0,
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Ok(BtCoefficients {
            xi_strong: 0.0,
            xi_weak: 0.0,
        });
    }
    // d/dxi of the weighted log-likelihood, monotone decreasing in xi.
    let deriv = |xi: f64| -> f64 {
        weights
            .iter()
            .zip(credits.iter())
            .map(|(w, c)| w * (c - sigmoid(xi)))
            .sum()
    };
    let (mut lo, mut hi) = (-XI_CLAMP, XI_CLAMP);
    let xi = if deriv(lo) <= 0.0 {
        lo
    } else if deriv(hi) >= 0.0 {
        hi
    } else {
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(BtCoefficients {
        xi_strong: xi,
        xi_weak: 0.0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreEntry {
    pub query_id: String,
    pub outcome: Outcome,
}

/// Preference store plus retrieval settings. Embeddings are rebuilt from
/// the stored query texts rather than serialized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwRouter {
    pub id: String,
    pub k_retrieve: usize,
    pub hash_dim: usize,
    pub entries: Vec<StoreEntry>,
    #[serde(skip)]
    embeddings: Vec<Vec<f64>>,
}

impl SwRouter {
    /// Index a corpus with its preference outcomes.
    pub fn from_corpus(
        corpus: &[Query],
        prefs: &[PreferenceRecord],
        k_retrieve: usize,
        hash_dim: usize,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("preference store".into()));
        }
        if k_retrieve == 0 {
            return Err(Error::invalid("k_retrieve must be >= 1"));
        }
        let lookup: std::collections::HashMap<&str, Outcome> = prefs
            .iter()
            .map(|p| (p.query_id.as_str(), p.outcome))
            .collect();
        let mut entries = Vec::with_capacity(corpus.len());
        let mut embeddings = Vec::with_capacity(corpus.len());
        for q in corpus {
            let outcome = lookup.get(q.id.as_str()).copied().ok_or_else(|| {
                Error::invalid(format!("preferences do not cover query {}", q.id))
            })?;
            entries.push(StoreEntry {
                query_id: q.id.clone(),
                outcome,
            });
            embeddings.push(embed_hashed(&q.text, hash_dim));
        }
        Ok(SwRouter {
            id: super::RouterKind::Sw.as_str().to_string(),
            k_retrieve,
            hash_dim,
            entries,
            embeddings,
        })
    }

    /// Recompute store embeddings after deserialization.
    pub fn rebuild_embeddings(&mut self, corpus: &[Query]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &str> = corpus
            .iter()
            .map(|q| (q.id.as_str(), q.text.as_str()))
            .collect();
        self.embeddings = self
            .entries
            .iter()
            .map(|e| {
                lookup
                    .get(e.query_id.as_str())
                    .map(|text| embed_hashed(text, self.hash_dim))
                    .ok_or_else(|| {
                        Error::invalid(format!("store query {} missing from corpus", e.query_id))
                    })
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn neighborhood(&self, embedding: &[f64]) -> (Vec<f64>, Vec<Outcome>) {
        let mut sims: Vec<(f64, usize)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (cosine(embedding, e).unwrap_or(0.0), i))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        sims.truncate(self.k_retrieve.min(sims.len()));
        // Negative cosines are floored at zero: the BT aggregation is a
        // weighted likelihood and cannot take negative weights.
        let weights = sims.iter().map(|(s, _)| s.max(0.0)).collect();
        let outcomes = sims.iter().map(|(_, i)| self.entries[*i].outcome).collect();
        (weights, outcomes)
    }
}

impl Router for SwRouter {
    fn id(&self) -> &str {
        &self.id
    }

    fn win_rate(&self, text: &str) -> Result<WinRate> {
        if self.embeddings.is_empty() {
            return Err(Error::Untrained(
                "similarity store has no embeddings (empty or not rebuilt)".into(),
            ));
        }
        let embedding = embed_hashed(text, self.hash_dim);
        let (weights, outcomes) = self.neighborhood(&embedding);
        let bt = fit_bt_weighted(&weights, &outcomes)?;
        WinRate::new(bt.win_rate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Complexity, Split};

    fn query(id: &str, text: &str) -> Query {
        Query {
            id: id.into(),
            text: text.into(),
            complexity: Complexity::Unknown,
            origin: "t".into(),
            split: Split::Unassigned,
        }
    }

    fn pref(id: &str, outcome: Outcome) -> PreferenceRecord {
        PreferenceRecord {
            query_id: id.into(),
            outcome,
        }
    }

    #[test]
    fn empty_store_is_an_error() {
        assert!(SwRouter::from_corpus(&[], &[], 4, 64).is_err());
    }

    #[test]
    fn unanimous_strong_neighborhood_saturates_at_clamp() {
        let bt = fit_bt_weighted(&[0.8, 0.6], &[Outcome::StrongWins, Outcome::StrongWins]).unwrap();
        assert_eq!(bt.xi_strong, XI_CLAMP);
        assert!(bt.win_rate() > 0.9999);
    }

    #[test]
    fn balanced_outcomes_with_equal_weights_give_half() {
        let bt = fit_bt_weighted(
            &[0.5, 0.5, 0.5, 0.5],
            &[
                Outcome::StrongWins,
                Outcome::WeakWins,
                Outcome::StrongWins,
                Outcome::WeakWins,
            ],
        )
        .unwrap();
        assert!((bt.win_rate() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fit_matches_grid_search_oracle() {
        // 1-D grid search over xi is the independent maximizer.
        let weights = [0.9, 0.5, 0.1];
        let outcomes = [Outcome::StrongWins, Outcome::WeakWins, Outcome::StrongWins];
        let credits = [1.0, 0.0, 1.0];
        let ll = |xi: f64| -> f64 {
            weights
                .iter()
                .zip(credits.iter())
                .map(|(w, c)| {
                    let p = sigmoid(xi);
                    w * (c * p.ln() + (1.0 - c) * (1.0 - p).ln())
                })
                .sum()
        };
        let mut best = (-XI_CLAMP, f64::NEG_INFINITY);
        let steps = 40_000;
        for i in 0..=steps {
            let xi = -XI_CLAMP + 2.0 * XI_CLAMP * (i as f64 / steps as f64);
            let v = ll(xi);
            if v > best.1 {
                best = (xi, v);
            }
        }
        let bt = fit_bt_weighted(&weights, &outcomes).unwrap();
        assert!(
            (bt.win_rate() - sigmoid(best.0)).abs() < 1e-3,
            "fit {} vs grid {}",
            bt.win_rate(),
            sigmoid(best.0)
        );
    }

    #[test]
    fn retrieval_prefers_similar_text() {
        let corpus = vec![
            query("a", "prove the integral step by step with constraints"),
            query("b", "what is the capital of france"),
            query("c", "derive the integral carefully step by step"),
        ];
        let prefs = vec![
            pref("a", Outcome::StrongWins),
            pref("b", Outcome::WeakWins),
            pref("c", Outcome::StrongWins),
        ];
        let router = SwRouter::from_corpus(&corpus, &prefs, 2, 256).unwrap();
        let wr_complex = router
            .win_rate("prove this integral step by step")
            .unwrap()
            .value();
        let wr_simple = router.win_rate("what is the capital of spain").unwrap().value();
        assert!(wr_complex > wr_simple);
    }

    #[test]
    fn serde_roundtrip_requires_rebuild() {
        let corpus = vec![query("a", "alpha beta"), query("b", "gamma delta")];
        let prefs = vec![pref("a", Outcome::StrongWins), pref("b", Outcome::WeakWins)];
        let router = SwRouter::from_corpus(&corpus, &prefs, 2, 64).unwrap();
        let json = serde_json::to_string(&router).unwrap();
        let mut loaded: SwRouter = serde_json::from_str(&json).unwrap();
        assert!(loaded.win_rate("alpha beta").is_err());
        loaded.rebuild_embeddings(&corpus).unwrap();
        assert_eq!(
            loaded.win_rate("alpha beta").unwrap().value(),
            router.win_rate("alpha beta").unwrap().value()
        );
    }
}
