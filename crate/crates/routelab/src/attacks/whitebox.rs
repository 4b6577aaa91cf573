//! White-box token flipping: first-order replacement scores from the
//! router's embedding gradients, with exact re-evaluation of the top
//! candidates and strict-improvement acceptance.
//!
//! The adaptive variant adds the detector term of the combined loss. The
//! detector consumes a hashed representation of the text, which is not a
//! function of the token-embedding rows, so the combined gradient equals
//! the router component alone; the detector still influences which flips
//! survive exact re-evaluation.

use rand::Rng;

use crate::corpus::Query;
use crate::embed::MAX_TOKENS;
use crate::error::{Error, Result};
use crate::guard::SiameseModel;
use crate::parallel::map_batch;
use crate::routers::DifferentiableRouter;
use crate::seeding::derive_rng;

use super::{target_prob, AttackConfig, AttackTrace};

/// Detector handle for the adaptive variant.
pub struct AdaptiveGuard<'a> {
    pub model: &'a SiameseModel,
    pub reference_embeddings: &'a [Vec<f64>],
    /// Weight of the detector loss term.
    pub beta: f64,
    pub epsilon: f64,
}

struct BatchCtx {
    /// Query tokens truncated so trigger + query fits the sequence limit.
    query_tokens: Vec<Vec<usize>>,
    query_texts: Vec<String>,
    /// Per-query sums of embedding rows over `query_tokens`.
    row_sums: Vec<Vec<f64>>,
    /// Combined token counts (trigger length + effective query length).
    combined_len: Vec<f64>,
}

fn build_ctx(
    router: &dyn DifferentiableRouter,
    queries: &[Query],
    trigger_len: usize,
) -> Result<BatchCtx> {
    let table = router.table();
    let keep = MAX_TOKENS.saturating_sub(trigger_len).max(1);
    let mut query_tokens = Vec::with_capacity(queries.len());
    let mut query_texts = Vec::with_capacity(queries.len());
    let mut row_sums = Vec::with_capacity(queries.len());
    let mut combined_len = Vec::with_capacity(queries.len());
    for q in queries {
        let mut toks = router.vocab().tokenize(&q.text).tokens;
        toks.truncate(keep);
        let mut sum = vec![0.0; table.dim];
        for &t in &toks {
            for (s, r) in sum.iter_mut().zip(table.row(t)) {
                *s += r;
            }
        }
        combined_len.push((trigger_len + toks.len()) as f64);
        query_tokens.push(toks);
        query_texts.push(q.text.clone());
        row_sums.push(sum);
    }
    Ok(BatchCtx {
        query_tokens,
        query_texts,
        row_sums,
        combined_len,
    })
}

fn trigger_row_sum(router: &dyn DifferentiableRouter, trigger: &[usize]) -> Vec<f64> {
    let table = router.table();
    let mut sum = vec![0.0; table.dim];
    for &t in trigger {
        for (s, r) in sum.iter_mut().zip(table.row(t)) {
            *s += r;
        }
    }
    sum
}

/// Batch-mean target probability for a trigger given the cached context.
fn router_objective(
    router: &dyn DifferentiableRouter,
    ctx: &BatchCtx,
    trigger_sum: &[f64],
    target: crate::routers::ModelChoice,
) -> Result<f64> {
    let per_query: Result<Vec<f64>> = map_batch(
        &(0..ctx.query_tokens.len()).collect::<Vec<_>>(),
        |&i| -> Result<f64> {
            let pooled: Vec<f64> = trigger_sum
                .iter()
                .zip(ctx.row_sums[i].iter())
                .map(|(t, q)| (t + q) / ctx.combined_len[i])
                .collect();
            Ok(target_prob(router.win_rate_pooled(&pooled)?, target))
        },
    )
    .into_iter()
    .collect();
    let vals = per_query?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Mean detector loss `-ln(1 - guard_prob + eps)` over the batch for a
/// trigger text; lower when the detector sees the queries as benign.
fn defense_loss(guard: &AdaptiveGuard, ctx: &BatchCtx, trigger_text: &str) -> Result<f64> {
    let per_query: Result<Vec<f64>> = map_batch(&ctx.query_texts, |q| -> Result<f64> {
        let text = format!("{trigger_text} {q}");
        let adv = guard
            .model
            .guard_prob(&text, guard.reference_embeddings)?;
        Ok(-((1.0 - adv + guard.epsilon).ln()))
    })
    .into_iter()
    .collect();
    let vals = per_query?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Batch-mean gradient of the router objective with respect to any
/// trigger-token row (mean pooling makes it position independent).
fn objective_grad(
    router: &dyn DifferentiableRouter,
    ctx: &BatchCtx,
    trigger_sum: &[f64],
    target: crate::routers::ModelChoice,
) -> Result<Vec<f64>> {
    let dim = router.table().dim;
    let grads: Result<Vec<Vec<f64>>> = map_batch(
        &(0..ctx.query_tokens.len()).collect::<Vec<_>>(),
        |&i| -> Result<Vec<f64>> {
            let pooled: Vec<f64> = trigger_sum
                .iter()
                .zip(ctx.row_sums[i].iter())
                .map(|(t, q)| (t + q) / ctx.combined_len[i])
                .collect();
            let (_, g_pooled) = router.target_prob_grad_pooled(&pooled, target)?;
            Ok(g_pooled
                .iter()
                .map(|g| g / ctx.combined_len[i])
                .collect())
        },
    )
    .into_iter()
    .collect();
    let grads = grads?;
    let mut mean = vec![0.0; dim];
    for g in &grads {
        for (m, x) in mean.iter_mut().zip(g.iter()) {
            *m += x;
        }
    }
    let inv = 1.0 / grads.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

fn join_tokens(router: &dyn DifferentiableRouter, tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&t| router.vocab().token(t).unwrap_or(crate::embed::UNK_TOKEN))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Core flip loop maximizing `alpha * router_objective - beta * defense`.
fn hotflip_core(
    router: &dyn DifferentiableRouter,
    train_queries: &[Query],
    guard: Option<&AdaptiveGuard>,
    alpha: f64,
    cfg: &AttackConfig,
) -> Result<(String, AttackTrace)> {
    cfg.validate()?;
    if train_queries.is_empty() {
        return Err(Error::EmptyInput("white-box train queries".into()));
    }
    let vocab = router.vocab();
    let candidates = vocab.trigger_candidates();
    if candidates.is_empty() {
        return Err(Error::invalid("vocabulary has no trigger candidates"));
    }

    let mut rng = derive_rng(cfg.seed, "whitebox", 0);
    // Deterministic batch subsample of the train split.
    let take = cfg.batch_size.min(train_queries.len());
    let mut order: Vec<usize> = (0..train_queries.len()).collect();
    for i in 0..take {
        let j = rng.gen_range(i..order.len());
        order.swap(i, j);
    }
    let batch: Vec<Query> = order[..take]
        .iter()
        .map(|&i| train_queries[i].clone())
        .collect();
    let ctx = build_ctx(router, &batch, cfg.trigger_len)?;

    let mut trigger: Vec<usize> = (0..cfg.trigger_len)
        .map(|_| candidates[rng.gen_range(0..candidates.len())])
        .collect();
    let table = router.table();

    let score_of = |trigger_tokens: &[usize]| -> Result<f64> {
        let sum = trigger_row_sum(router, trigger_tokens);
        let obj = router_objective(router, &ctx, &sum, cfg.target)?;
        match guard {
            None => Ok(alpha * obj),
            Some(g) => {
                let text = join_tokens(router, trigger_tokens);
                Ok(alpha * obj - g.beta * defense_loss(g, &ctx, &text)?)
            }
        }
    };

    let mut best_score = score_of(&trigger)?;
    let mut trace = vec![best_score];
    let mut accepted = Vec::new();

    for _ in 0..cfg.iterations {
        let trigger_sum = trigger_row_sum(router, &trigger);
        let g = objective_grad(router, &ctx, &trigger_sum, cfg.target)?;
        // alpha scales the router gradient; the detector path contributes
        // no token-row gradient (hashed input), so this is the full
        // combined gradient.
        let g: Vec<f64> = g.iter().map(|x| alpha * x).collect();

        // First-order gain of placing token v anywhere: e_v . g; the
        // per-position score subtracts the incumbent's projection.
        let projections: Vec<f64> = candidates
            .iter()
            .map(|&v| {
                table.row(v).iter().zip(g.iter()).map(|(e, gi)| e * gi).sum()
            })
            .collect();
        let mut scored: Vec<(f64, usize, usize)> = Vec::new();
        for (pos, &cur) in trigger.iter().enumerate() {
            let cur_proj: f64 = table
                .row(cur)
                .iter()
                .zip(g.iter())
                .map(|(e, gi)| e * gi)
                .sum();
            for (ci, &v) in candidates.iter().enumerate() {
                if v != cur {
                    scored.push((projections[ci] - cur_proj, pos, v));
                }
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        scored.truncate(cfg.topk_candidates);

        // Exact re-evaluation of the shortlisted flips.
        let mut best_flip: Option<(f64, usize, usize)> = None;
        let exact: Result<Vec<f64>> = scored
            .iter()
            .map(|&(_, pos, v)| {
                let mut t = trigger.clone();
                t[pos] = v;
                score_of(&t)
            })
            .collect();
        for (&(_, pos, v), value) in scored.iter().zip(exact?) {
            if best_flip.map_or(true, |(b, _, _)| value > b) {
                best_flip = Some((value, pos, v));
            }
        }
        match best_flip {
            Some((value, pos, v)) if value > best_score => {
                trigger[pos] = v;
                best_score = value;
                accepted.push((pos, v));
                trace.push(best_score);
            }
            _ => break,
        }
    }

    Ok((
        join_tokens(router, &trigger),
        AttackTrace {
            objective: trace,
            accepted_flips: accepted,
            config: cfg.snapshot(vocab.len()),
        },
    ))
}

/// First-order token flipping on the batch-mean target probability.
pub fn whitebox_optimize(
    router: &dyn DifferentiableRouter,
    train_queries: &[Query],
    cfg: &AttackConfig,
) -> Result<(String, AttackTrace)> {
    hotflip_core(router, train_queries, None, 1.0, cfg)
}

/// Token flipping on the combined objective
/// `alpha * P(target) - beta * mean(-ln(1 - guard_prob + eps))`.
pub fn adaptive_whitebox(
    router: &dyn DifferentiableRouter,
    train_queries: &[Query],
    guard: &AdaptiveGuard,
    alpha: f64,
    cfg: &AttackConfig,
) -> Result<(String, AttackTrace)> {
    hotflip_core(router, train_queries, Some(guard), alpha, cfg)
}
