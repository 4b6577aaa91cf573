//! Gray-box hill climbing: the adversary only observes win rates, so the
//! search evaluates the trigger alone and greedily keeps the best of the
//! incumbent and its random single-substitution neighbors over the
//! fixed-length token string.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embed::Vocab;
use crate::error::{Error, Result};
use crate::guard::SiameseModel;
use crate::parallel::map_batch;
use crate::routers::Router;
use crate::seeding::derive_rng;

use super::{target_prob, AttackConfig, AttackTrace};

fn join_tokens(vocab: &Vocab, tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&t| vocab.token(t).unwrap_or(crate::embed::UNK_TOKEN))
        .collect::<Vec<_>>()
        .join(" ")
}

// The search space is fixed-length token strings, so a neighbor is a
// single random substitution. Length-changing edits turn out to be
// self-defeating here: deleting a below-average token always raises the
// trigger-alone objective, so the climb collapses triggers to one or two
// tokens with no influence once a query is appended.
fn random_neighbor(rng: &mut ChaCha8Rng, tokens: &[usize], candidates: &[usize]) -> Vec<usize> {
    let mut out = tokens.to_vec();
    let pos = rng.gen_range(0..out.len());
    out[pos] = candidates[rng.gen_range(0..candidates.len())];
    out
}

/// Greedy loop shared by the plain and adaptive variants; the objective
/// maps a trigger text to the value being maximized.
fn climb<F>(vocab: &Vocab, cfg: &AttackConfig, objective: F) -> Result<(String, AttackTrace)>
where
    F: Fn(&str) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let candidates = vocab.trigger_candidates();
    if candidates.is_empty() {
        return Err(Error::invalid("vocabulary has no trigger candidates"));
    }
    let mut rng = derive_rng(cfg.seed, "graybox", 0);
    let mut tokens: Vec<usize> = (0..cfg.trigger_len)
        .map(|_| candidates[rng.gen_range(0..candidates.len())])
        .collect();

    let mut best_obj = objective(&join_tokens(vocab, &tokens))?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(best_obj);

    for _ in 0..cfg.iterations {
        // Incumbent first so argmax keeps it on exact ties.
        let mut pool = Vec::with_capacity(cfg.neighbors_per_step + 1);
        pool.push(tokens.clone());
        for _ in 0..cfg.neighbors_per_step {
            pool.push(random_neighbor(&mut rng, &tokens, &candidates));
        }
        let texts: Vec<String> = pool.iter().map(|t| join_tokens(vocab, t)).collect();
        let values: Result<Vec<f64>> = map_batch(&texts, |t| objective(t)).into_iter().collect();
        let values = values?;
        let mut best_idx = 0;
        for (i, v) in values.iter().enumerate() {
            if *v > values[best_idx] {
                best_idx = i;
            }
        }
        if best_idx != 0 {
            tokens = pool[best_idx].clone();
            best_obj = values[best_idx];
        }
        trace.push(best_obj);
    }
    Ok((
        join_tokens(vocab, &tokens),
        AttackTrace {
            objective: trace,
            accepted_flips: Vec::new(),
            config: cfg.snapshot(vocab.len()),
        },
    ))
}

/// Maximize `P(target | t)` over single-edit neighborhoods, evaluating
/// the trigger alone; returns the best trigger found.
pub fn graybox_optimize(
    router: &dyn Router,
    vocab: &Vocab,
    cfg: &AttackConfig,
) -> Result<(String, AttackTrace)> {
    climb(vocab, cfg, |text| {
        Ok(target_prob(router.win_rate(text)?.value(), cfg.target))
    })
}

/// Gray-box loop with the detector's adversarial probability subtracted
/// as a penalty: `P(target | t) - penalty * guard_prob(t)`.
pub fn adaptive_graybox(
    router: &dyn Router,
    vocab: &Vocab,
    guard: &SiameseModel,
    reference_embeddings: &[Vec<f64>],
    penalty_weight: f64,
    cfg: &AttackConfig,
) -> Result<(String, AttackTrace)> {
    if reference_embeddings.is_empty() {
        return Err(Error::EmptyInput("guard references".into()));
    }
    climb(vocab, cfg, |text| {
        let p = target_prob(router.win_rate(text)?.value(), cfg.target);
        let g = guard.guard_prob(text, reference_embeddings)?;
        Ok(p - penalty_weight * g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::GuardConfig;
    use crate::routers::{ModelChoice, WinRate};
    use std::collections::HashMap;

    /// Objective is the mean per-token score, so the global optimum is
    /// reachable at any length by repeating the best token.
    struct TokenScoreRouter {
        scores: HashMap<String, f64>,
    }

    impl Router for TokenScoreRouter {
        fn id(&self) -> &str {
            "token-score"
        }
        fn win_rate(&self, text: &str) -> Result<WinRate> {
            let toks = crate::embed::tokenize_words(text);
            let sum: f64 = toks.iter().map(|t| self.scores.get(t).copied().unwrap_or(0.0)).sum();
            WinRate::new(if toks.is_empty() { 0.0 } else { sum / toks.len() as f64 })
        }
    }

    fn five_token_world() -> (TokenScoreRouter, Vocab) {
        let words = ["alpha", "bravo", "casey", "delta", "echon"];
        let scores = [0.31, 0.74, 0.12, 0.55, 0.48];
        let router = TokenScoreRouter {
            scores: words
                .iter()
                .zip(scores.iter())
                .map(|(w, s)| (w.to_string(), *s))
                .collect(),
        };
        let vocab = Vocab::from_texts([words.join(" ").as_str()]);
        (router, vocab)
    }

    #[test]
    fn zero_neighbors_returns_initial_trigger() {
        let (router, vocab) = five_token_world();
        let cfg = AttackConfig {
            trigger_len: 2,
            iterations: 5,
            neighbors_per_step: 0,
            ..AttackConfig::new(ModelChoice::Strong, 3)
        };
        let (trigger, trace) = graybox_optimize(&router, &vocab, &cfg).unwrap();
        assert!(trace.objective.windows(2).all(|w| w[0] == w[1]));
        // Same seed with a fresh run reproduces the same initial trigger.
        let (t2, _) = graybox_optimize(&router, &vocab, &cfg).unwrap();
        assert_eq!(trigger, t2);
    }

    #[test]
    fn trace_is_monotone_nondecreasing() {
        let (router, vocab) = five_token_world();
        let cfg = AttackConfig {
            trigger_len: 2,
            iterations: 40,
            neighbors_per_step: 6,
            ..AttackConfig::new(ModelChoice::Strong, 5)
        };
        let (_, trace) = graybox_optimize(&router, &vocab, &cfg).unwrap();
        assert!(trace.objective.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn reaches_exhaustive_optimum_on_tiny_vocabulary() {
        // Oracle: enumerate all 25 length-2 triggers.
        let (router, vocab) = five_token_world();
        let words = ["alpha", "bravo", "casey", "delta", "echon"];
        let mut best = f64::NEG_INFINITY;
        for a in words {
            for b in words {
                let wr = router.win_rate(&format!("{a} {b}")).unwrap().value();
                best = best.max(wr);
            }
        }
        let cfg = AttackConfig {
            trigger_len: 2,
            iterations: 120,
            neighbors_per_step: 10,
            ..AttackConfig::new(ModelChoice::Strong, 7)
        };
        let (_, trace) = graybox_optimize(&router, &vocab, &cfg).unwrap();
        let final_obj = *trace.objective.last().unwrap();
        assert!(
            (final_obj - best).abs() < 1e-12,
            "climbed to {final_obj}, exhaustive max {best}"
        );
    }

    #[test]
    fn weak_target_minimizes_win_rate() {
        let (router, vocab) = five_token_world();
        let cfg = AttackConfig {
            trigger_len: 2,
            iterations: 120,
            neighbors_per_step: 10,
            ..AttackConfig::new(ModelChoice::Weak, 7)
        };
        let (trigger, _) = graybox_optimize(&router, &vocab, &cfg).unwrap();
        // Lowest-scoring token is "casey" at 0.12.
        let wr = router.win_rate(&trigger).unwrap().value();
        assert!((wr - 0.12).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_adaptive_matches_plain_trajectory() {
        let (router, vocab) = five_token_world();
        let gcfg = GuardConfig {
            hash_dim: 64,
            encoder_hidden: 16,
            encoder_out: 8,
            embed_dim: 4,
            clf_hidden: 8,
            ..GuardConfig::default()
        };
        let guard = SiameseModel::init(&gcfg, 2);
        let refs: Vec<Vec<f64>> = ["a ref", "b ref"]
            .iter()
            .map(|t| guard.encode(t).unwrap())
            .collect();
        let cfg = AttackConfig {
            trigger_len: 2,
            iterations: 30,
            neighbors_per_step: 6,
            ..AttackConfig::new(ModelChoice::Strong, 11)
        };
        let (plain, plain_trace) = graybox_optimize(&router, &vocab, &cfg).unwrap();
        let (adaptive, adaptive_trace) =
            adaptive_graybox(&router, &vocab, &guard, &refs, 0.0, &cfg).unwrap();
        assert_eq!(plain, adaptive);
        assert_eq!(plain_trace.objective, adaptive_trace.objective);
    }

    #[test]
    fn huge_penalty_prioritizes_low_guard_probability() {
        let (router, vocab) = five_token_world();
        let gcfg = GuardConfig {
            hash_dim: 64,
            encoder_hidden: 16,
            encoder_out: 8,
            embed_dim: 4,
            clf_hidden: 8,
            ..GuardConfig::default()
        };
        let guard = SiameseModel::init(&gcfg, 2);
        let refs: Vec<Vec<f64>> = ["a ref", "b ref"]
            .iter()
            .map(|t| guard.encode(t).unwrap())
            .collect();
        let cfg = AttackConfig {
            trigger_len: 2,
            iterations: 60,
            neighbors_per_step: 8,
            ..AttackConfig::new(ModelChoice::Strong, 13)
        };
        let (trigger, trace) = adaptive_graybox(&router, &vocab, &guard, &refs, 1e6, &cfg).unwrap();
        // objective = p - 1e6*g with p in [0,1], and the climb is
        // monotone, so g_final <= (1 - obj0)/1e6 <= g_initial + 1e-6:
        // the dominant penalty forces guard probability down.
        let g_final = guard.guard_prob(&trigger, &refs).unwrap();
        let obj0 = trace.objective[0];
        assert!(g_final <= (1.0 - obj0) / 1e6 + 1e-12);
    }
}
