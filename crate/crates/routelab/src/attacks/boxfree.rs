//! Box-free trigger construction: no router access at attack time.
//! Proxy routers select the optimization question set (the queries that
//! consistently favor the target model), and a summarizer distills it
//! into a trigger. The default summarizer is deterministic: it picks the
//! tokens with the highest log-odds ratio between the favored set and
//! its complement and fills a fixed template.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

use crate::corpus::{select_complex_pool, select_normal_pool, Query};
use crate::embed::tokenize_words;
use crate::error::{Error, Result};
use crate::routers::{CalibratedRouter, ModelChoice};
use crate::seeding::derive_rng;

/// Trigger synthesis from a favored query set. Pluggable so an external
/// model can replace the default lexical summarizer.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, favored: &[Query], complement: &[Query], seed: u64) -> Result<String>;
}

/// Deterministic summarizer: ranks the favored set's naturally occurring
/// adjacent word pairs by smoothed token log-odds against the complement,
/// seed-samples `num_phrases` of them, and weaves them into a fluent
/// carrier sentence. Using attested pairs keeps the trigger's bigrams
/// close to natural text, unlike the garbled search-based triggers.
#[derive(Debug, Clone)]
pub struct LogOddsSummarizer {
    pub num_phrases: usize,
    /// The sampling pool holds `pool_factor * num_phrases` top phrases.
    pub pool_factor: usize,
}

impl Default for LogOddsSummarizer {
    fn default() -> Self {
        LogOddsSummarizer {
            num_phrases: 5,
            pool_factor: 3,
        }
    }
}

fn token_counts(queries: &[Query]) -> (BTreeMap<String, f64>, f64) {
    let mut counts = BTreeMap::new();
    let mut total = 0.0;
    for q in queries {
        for t in tokenize_words(&q.text) {
            *counts.entry(t).or_insert(0.0) += 1.0;
            total += 1.0;
        }
    }
    (counts, total)
}

fn bigram_set(queries: &[Query]) -> std::collections::HashSet<(String, String)> {
    let mut set = std::collections::HashSet::new();
    for q in queries {
        let toks = tokenize_words(&q.text);
        for pair in toks.windows(2) {
            set.insert((pair[0].clone(), pair[1].clone()));
        }
    }
    set
}

impl Summarizer for LogOddsSummarizer {
    fn summarize(&self, favored: &[Query], complement: &[Query], seed: u64) -> Result<String> {
        if favored.is_empty() {
            return Err(Error::EmptyInput("favored query set".into()));
        }
        let (fav_counts, fav_total) = token_counts(favored);
        let (com_counts, com_total) = token_counts(complement);
        let vocab_size = fav_counts
            .keys()
            .chain(com_counts.keys())
            .collect::<HashSet<_>>()
            .len()
            .max(1) as f64;
        let smooth = 0.5;
        let token_score = |tok: &str| -> f64 {
            let cf = fav_counts.get(tok).copied().unwrap_or(0.0);
            let cc = com_counts.get(tok).copied().unwrap_or(0.0);
            let pf = (cf + smooth) / (fav_total + smooth * vocab_size);
            let pc = (cc + smooth) / (com_total.max(0.0) + smooth * vocab_size);
            pf.ln() - pc.ln()
        };

        // Candidate phrases: adjacent word pairs attested in the favored
        // texts, scored by their tokens' combined log-odds. Pairs that
        // also occur somewhere in the complement are natural collocations
        // rather than in-group jargon, which keeps the crafted trigger
        // fluent; they are preferred when available.
        let complement_bigrams = bigram_set(complement);
        let mut phrase_scores: BTreeMap<String, (f64, bool)> = BTreeMap::new();
        for q in favored {
            let toks = tokenize_words(&q.text);
            for pair in toks.windows(2) {
                if pair.iter().any(|t| !t.chars().all(char::is_alphanumeric)) {
                    continue;
                }
                let phrase = format!("{} {}", pair[0], pair[1]);
                let score = token_score(&pair[0]) + token_score(&pair[1]);
                let natural =
                    complement_bigrams.contains(&(pair[0].clone(), pair[1].clone()));
                phrase_scores
                    .entry(phrase)
                    .and_modify(|s| s.0 = s.0.max(score))
                    .or_insert((score, natural));
            }
        }
        let natural_count = phrase_scores.values().filter(|(_, n)| *n).count();
        let prefer_natural = natural_count >= self.num_phrases;
        let phrase_scores: BTreeMap<String, f64> = phrase_scores
            .into_iter()
            .filter(|(_, (_, natural))| !prefer_natural || *natural)
            .map(|(p, (s, _))| (p, s))
            .collect();
        let mut scored: Vec<(f64, String)> = phrase_scores
            .into_iter()
            .map(|(p, s)| (s, p))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let pool_len = (self.pool_factor * self.num_phrases).min(scored.len());
        let mut pool: Vec<(f64, String)> = scored.into_iter().take(pool_len).collect();

        // Seeded weighted sampling without replacement from the pool.
        let mut rng = derive_rng(seed, "boxfree-sample", 0);
        let floor = pool
            .iter()
            .map(|(s, _)| *s)
            .fold(f64::INFINITY, f64::min);
        let mut picked = Vec::with_capacity(self.num_phrases.min(pool.len()));
        while picked.len() < self.num_phrases && !pool.is_empty() {
            let weights: Vec<f64> = pool.iter().map(|(s, _)| s - floor + 1e-3).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut idx = 0;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
                idx = i;
            }
            picked.push(pool.remove(idx).1);
        }
        Ok(format!(
            "one more quick question about the {} please, a quick answer is fine.",
            picked.join(", ")
        ))
    }
}

/// Build the optimization question set from the proxies and summarize it
/// into a trigger. For a Strong target the favored set is the top half
/// across all proxies; for Weak, the bottom half.
pub fn boxfree_optimize(
    proxies: &[CalibratedRouter],
    corpus: &[Query],
    summarizer: &dyn Summarizer,
    target: ModelChoice,
    seed: u64,
) -> Result<String> {
    let favored = match target {
        ModelChoice::Strong => select_complex_pool(corpus, proxies)?,
        ModelChoice::Weak => select_normal_pool(corpus, proxies)?,
    };
    if favored.is_empty() {
        return Err(Error::EmptyInput(
            "no query favors the target across all proxies".into(),
        ));
    }
    let favored_ids: HashSet<&str> = favored.iter().map(|q| q.id.as_str()).collect();
    let complement: Vec<Query> = corpus
        .iter()
        .filter(|q| !favored_ids.contains(q.id.as_str()))
        .cloned()
        .collect();
    summarizer.summarize(&favored, &complement, seed)
}
