//! Comparison defenses: perplexity filtering over a bigram language model
//! and majority voting across multiple routers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::embed::tokenize_words;
use crate::error::{Error, Result};
use crate::parallel::map_batch;
use crate::routers::{CalibratedRouter, ModelChoice};
use crate::GateDecision;

/// Bigram language model with add-k smoothing. The vocabulary size
/// includes one shared bucket for unseen tokens, so the smoothed
/// conditional distribution sums to one per context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NGramLm {
    pub k: f64,
    pub vocab_size: usize,
    pub total_tokens: u64,
    pub unigram: BTreeMap<String, u64>,
    pub bigram: BTreeMap<String, BTreeMap<String, u64>>,
    /// Continuation totals per context (a text's final token is not a
    /// context, so this differs from the unigram counts).
    pub context_totals: BTreeMap<String, u64>,
}

pub const DEFAULT_ADD_K: f64 = 0.5;

impl NGramLm {
    pub fn train<'a, I: IntoIterator<Item = &'a str>>(texts: I, k: f64) -> Result<Self> {
        if k < 0.0 {
            return Err(Error::invalid("smoothing constant must be >= 0"));
        }
        let mut unigram: BTreeMap<String, u64> = BTreeMap::new();
        let mut bigram: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        let mut context_totals: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0u64;
        for text in texts {
            let toks = tokenize_words(text);
            for w in &toks {
                *unigram.entry(w.clone()).or_insert(0) += 1;
                total += 1;
            }
            for pair in toks.windows(2) {
                *bigram
                    .entry(pair[0].clone())
                    .or_default()
                    .entry(pair[1].clone())
                    .or_insert(0) += 1;
                *context_totals.entry(pair[0].clone()).or_insert(0) += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptyInput("language model training corpus".into()));
        }
        Ok(NGramLm {
            k,
            vocab_size: unigram.len() + 1,
            total_tokens: total,
            unigram,
            bigram,
            context_totals,
        })
    }

    fn smoothed(&self, num: u64, den: u64) -> f64 {
        let p = (num as f64 + self.k) / (den as f64 + self.k * self.vocab_size as f64);
        if p.is_finite() && p > 0.0 {
            p
        } else {
            1e-12
        }
    }

    fn unigram_prob(&self, w: &str) -> f64 {
        let c = self.unigram.get(w).copied().unwrap_or(0);
        self.smoothed(c, self.total_tokens)
    }

    fn bigram_prob(&self, prev: &str, w: &str) -> f64 {
        let ctx = self.bigram.get(prev);
        let num = ctx.and_then(|m| m.get(w)).copied().unwrap_or(0);
        let den = self.context_totals.get(prev).copied().unwrap_or(0);
        self.smoothed(num, den)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }
}

/// `exp` of the mean negative log probability over the token sequence:
/// the first token scores against the unigram distribution, the rest
/// against their bigram context.
pub fn perplexity(lm: &NGramLm, text: &str) -> Result<f64> {
    let toks = tokenize_words(text);
    if toks.is_empty() {
        return Err(Error::EmptyInput("text for perplexity".into()));
    }
    let mut nll = -lm.unigram_prob(&toks[0]).ln();
    for pair in toks.windows(2) {
        nll -= lm.bigram_prob(&pair[0], &pair[1]).ln();
    }
    Ok((nll / toks.len() as f64).exp())
}

/// Calibrated filter threshold: the highest perplexity observed among the
/// benign calibration queries, so the calibration set itself never trips
/// the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplThreshold {
    pub value: f64,
    pub corpus_id: String,
}

pub fn calibrate_ppl_threshold(
    lm: &NGramLm,
    corpus: &[Query],
    corpus_id: &str,
) -> Result<PplThreshold> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("calibration corpus".into()));
    }
    let ppls: Result<Vec<f64>> = map_batch(corpus, |q| perplexity(lm, &q.text))
        .into_iter()
        .collect();
    let value = ppls?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(PplThreshold {
        value,
        corpus_id: corpus_id.to_string(),
    })
}

/// Block iff the perplexity strictly exceeds the threshold.
pub fn ppl_filter(lm: &NGramLm, threshold: &PplThreshold, text: &str) -> Result<GateDecision> {
    Ok(if perplexity(lm, text)? > threshold.value {
        GateDecision::Block
    } else {
        GateDecision::Forward
    })
}

/// Majority over model votes; an even split falls back to the cheaper
/// weak model.
pub fn majority_model(votes: &[ModelChoice]) -> ModelChoice {
    let strong = votes.iter().filter(|v| **v == ModelChoice::Strong).count();
    if strong * 2 > votes.len() {
        ModelChoice::Strong
    } else {
        ModelChoice::Weak
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRouteDecision {
    pub model: ModelChoice,
    pub votes: Vec<ModelChoice>,
}

/// Route by majority vote of every router's own threshold decision.
pub fn multi_router_route(routers: &[CalibratedRouter], text: &str) -> Result<MultiRouteDecision> {
    if routers.is_empty() {
        return Err(Error::EmptyInput("router set".into()));
    }
    let votes: Result<Vec<ModelChoice>> = routers
        .iter()
        .map(|r| r.route(text).map(|d| d.model))
        .collect();
    let votes = votes?;
    Ok(MultiRouteDecision {
        model: majority_model(&votes),
        votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bigrams_give_unit_perplexity() {
        // Single context where every bigram has probability one (k = 0).
        let lm = NGramLm::train(["a a a a a"], 0.0).unwrap();
        let ppl = perplexity(&lm, "a a a").unwrap();
        assert!((ppl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_perplexity_equals_vocab_size() {
        let lm = NGramLm {
            k: 0.5,
            vocab_size: 40,
            total_tokens: 0,
            unigram: BTreeMap::new(),
            bigram: BTreeMap::new(),
            context_totals: BTreeMap::new(),
        };
        let ppl = perplexity(&lm, "x y z w").unwrap();
        assert!((ppl - 40.0).abs() < 1e-9);
    }

    #[test]
    fn garbled_prefix_raises_perplexity() {
        let benign: Vec<String> = (0..40)
            .map(|i| format!("what is the capital of country number {i}"))
            .collect();
        let lm = NGramLm::train(benign.iter().map(|s| s.as_str()), DEFAULT_ADD_K).unwrap();
        let clean = "what is the capital of country number 7";
        let garbled = "zq xv jk pw qq what is the capital of country number 7";
        assert!(perplexity(&lm, garbled).unwrap() > perplexity(&lm, clean).unwrap());
    }

    #[test]
    fn perplexity_ignores_trailing_whitespace() {
        let lm = NGramLm::train(["a b c a b"], 0.5).unwrap();
        let a = perplexity(&lm, "a b c").unwrap();
        let b = perplexity(&lm, "a b c   \n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_is_the_calibration_max_and_passes_every_calibration_query() {
        let texts = ["a b a b a", "a b c", "c c c c c c"];
        let lm = NGramLm::train(texts, 0.5).unwrap();
        let corpus: Vec<Query> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Query {
                id: format!("q{i}"),
                text: t.to_string(),
                complexity: crate::corpus::Complexity::Unknown,
                origin: "t".into(),
                split: crate::corpus::Split::Unassigned,
            })
            .collect();
        let thr = calibrate_ppl_threshold(&lm, &corpus, "c").unwrap();
        let max = texts
            .iter()
            .map(|t| perplexity(&lm, t).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(thr.value, max);
        for q in &corpus {
            assert_eq!(ppl_filter(&lm, &thr, &q.text).unwrap(), GateDecision::Forward);
        }
        // Monotone: a higher-perplexity benign query never lowers it.
        let mut bigger = corpus.clone();
        bigger.push(Query {
            id: "qx".into(),
            text: "zz qq ww vv".into(),
            complexity: crate::corpus::Complexity::Unknown,
            origin: "t".into(),
            split: crate::corpus::Split::Unassigned,
        });
        let thr2 = calibrate_ppl_threshold(&lm, &bigger, "c").unwrap();
        assert!(thr2.value >= thr.value);
    }

    #[test]
    fn filter_uses_strict_inequality() {
        let lm = NGramLm::train(["a b a b"], 0.5).unwrap();
        let ppl = perplexity(&lm, "a b a").unwrap();
        let at = PplThreshold {
            value: ppl,
            corpus_id: "c".into(),
        };
        assert_eq!(ppl_filter(&lm, &at, "a b a").unwrap(), GateDecision::Forward);
        let below = PplThreshold {
            value: ppl - 1e-9,
            corpus_id: "c".into(),
        };
        assert_eq!(ppl_filter(&lm, &below, "a b a").unwrap(), GateDecision::Block);
    }

    #[test]
    fn majority_vote_breaks_ties_toward_weak() {
        use ModelChoice::*;
        assert_eq!(majority_model(&[Strong, Strong, Strong, Weak]), Strong);
        assert_eq!(majority_model(&[Strong, Strong, Weak, Weak]), Weak);
        assert_eq!(majority_model(&[Weak, Weak, Weak, Weak]), Weak);
        assert_eq!(majority_model(&[Strong, Strong, Strong, Strong]), Strong);
    }

    #[test]
    fn lm_checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.json");
        let lm = NGramLm::train(["a b c a b"], 0.5).unwrap();
        lm.save(&path).unwrap();
        let loaded = NGramLm::load(&path).unwrap();
        assert_eq!(
            perplexity(&lm, "a b c").unwrap(),
            perplexity(&loaded, "a b c").unwrap()
        );
    }
}
