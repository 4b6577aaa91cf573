//! Win-rate estimators and the threshold routing rule.
//!
//! Four mechanisms produce the strong-model win rate for a query: a
//! 3-way outcome classifier, a bilinear matrix-factorization scorer, a
//! similarity-weighted Bradley–Terry aggregator over stored preferences,
//! and a 1–5 score classifier. A calibrated threshold is the median of
//! the win-rate distribution on a corpus, which routes exactly half of
//! that corpus to the strong model under the `>=` rule.

mod nets;
mod sw;

pub use nets::{train_router, ClsRouter, LlmRouter, MfRouter, RouterKind};
pub use sw::{fit_bt_weighted, BtCoefficients, SwRouter};

use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::error::{Error, Result};
use crate::parallel::map_batch;

// ── Core types ─────────────────────────────────────────────────────────

/// Probability in `[0,1]` that the strong model outperforms the weak one.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WinRate(f64);

impl WinRate {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("win rate out of range: {value}")));
        }
        Ok(WinRate(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Strong,
    Weak,
}

/// Outcome of the threshold rule for one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterDecision {
    pub model: ModelChoice,
    pub win_rate: WinRate,
    pub threshold: f64,
}

/// Median threshold recorded with its calibration corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub router: String,
    pub alpha: f64,
    pub corpus_id: String,
}

/// Score threshold for the 1–5 quality-score router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreThresholdTau(u8);

impl ScoreThresholdTau {
    pub fn new(tau: u8) -> Result<Self> {
        if !(1..=5).contains(&tau) {
            return Err(Error::invalid(format!("tau must be in [1,5], got {tau}")));
        }
        Ok(ScoreThresholdTau(tau))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl Default for ScoreThresholdTau {
    fn default() -> Self {
        ScoreThresholdTau(4)
    }
}

// ── Router abstraction ─────────────────────────────────────────────────

pub trait Router: Send + Sync {
    fn id(&self) -> &str;
    fn win_rate(&self, text: &str) -> Result<WinRate>;
}

/// Routers whose win rate is differentiable with respect to the pooled
/// token embedding, the surface gradient-guided attacks need.
pub trait DifferentiableRouter: Router {
    fn vocab(&self) -> &crate::embed::Vocab;
    fn table(&self) -> &crate::embed::EmbeddingTable;
    /// Win rate evaluated on a pooled token embedding.
    fn win_rate_pooled(&self, pooled: &[f64]) -> Result<f64>;
    /// `P(target)` and its gradient with respect to the pooled embedding.
    fn target_prob_grad_pooled(&self, pooled: &[f64], target: ModelChoice)
        -> Result<(f64, Vec<f64>)>;
}

/// Owned router of any mechanism; checkpoints deserialize into this.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyRouter {
    Cls(ClsRouter),
    Mf(MfRouter),
    Sw(SwRouter),
    Llm(LlmRouter),
}

impl Router for AnyRouter {
    fn id(&self) -> &str {
        match self {
            AnyRouter::Cls(r) => r.id(),
            AnyRouter::Mf(r) => r.id(),
            AnyRouter::Sw(r) => r.id(),
            AnyRouter::Llm(r) => r.id(),
        }
    }

    fn win_rate(&self, text: &str) -> Result<WinRate> {
        match self {
            AnyRouter::Cls(r) => r.win_rate(text),
            AnyRouter::Mf(r) => r.win_rate(text),
            AnyRouter::Sw(r) => r.win_rate(text),
            AnyRouter::Llm(r) => r.win_rate(text),
        }
    }
}

impl AnyRouter {
    pub fn differentiable(&self) -> Option<&dyn DifferentiableRouter> {
        match self {
            AnyRouter::Cls(r) => Some(r),
            AnyRouter::Mf(r) => Some(r),
            AnyRouter::Llm(r) => Some(r),
            AnyRouter::Sw(_) => None,
        }
    }
}

/// A router paired with its calibrated threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibratedRouter {
    pub router: AnyRouter,
    pub threshold: CalibratedThreshold,
}

impl CalibratedRouter {
    pub fn route(&self, text: &str) -> Result<RouterDecision> {
        route(&self.router, self.threshold.alpha, text)
    }
}

// ── Routing rule and calibration ───────────────────────────────────────

/// Threshold rule: Strong iff `win_rate >= alpha` (ties go Strong).
pub fn route(router: &dyn Router, alpha: f64, text: &str) -> Result<RouterDecision> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha out of [0,1]: {alpha}")));
    }
    let win_rate = router.win_rate(text)?;
    let model = if win_rate.value() >= alpha {
        ModelChoice::Strong
    } else {
        ModelChoice::Weak
    };
    Ok(RouterDecision {
        model,
        win_rate,
        threshold: alpha,
    })
}

/// Median of a win-rate multiset, as the threshold rule needs it: the
/// element at rank `floor(n/2)` (0-based). Under `>=` this routes exactly
/// half of an even-sized distinct-valued corpus to the strong model.
pub fn median_threshold(win_rates: &[f64]) -> Result<f64> {
    if win_rates.is_empty() {
        return Err(Error::EmptyInput("win rates".into()));
    }
    let mut sorted = win_rates.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted[sorted.len() / 2])
}

/// Calibrate a router's threshold as the median win rate over a corpus.
pub fn calibrate_threshold(
    router: &AnyRouter,
    corpus: &[Query],
    corpus_id: &str,
) -> Result<CalibratedThreshold> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("calibration corpus".into()));
    }
    let rates: Result<Vec<f64>> = map_batch(corpus, |q| router.win_rate(&q.text))
        .into_iter()
        .map(|r| r.map(WinRate::value))
        .collect();
    Ok(CalibratedThreshold {
        router: router.id().to_string(),
        alpha: median_threshold(&rates?)?,
        corpus_id: corpus_id.to_string(),
    })
}

pub fn calibrate(router: AnyRouter, corpus: &[Query], corpus_id: &str) -> Result<CalibratedRouter> {
    let threshold = calibrate_threshold(&router, corpus, corpus_id)?;
    Ok(CalibratedRouter { router, threshold })
}

/// Batch win rates in corpus order.
pub fn win_rates(router: &dyn Router, queries: &[Query]) -> Result<Vec<f64>>
where
{
    map_batch(queries, |q| router.win_rate(&q.text))
        .into_iter()
        .map(|r| r.map(WinRate::value))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FixedRouter(f64);

    impl Router for FixedRouter {
        fn id(&self) -> &str {
            "fixed"
        }
        fn win_rate(&self, _text: &str) -> Result<WinRate> {
            WinRate::new(self.0)
        }
    }

    #[test]
    fn ties_at_alpha_route_strong() {
        let d = route(&FixedRouter(0.7), 0.7, "q").unwrap();
        assert_eq!(d.model, ModelChoice::Strong);
        let d = route(&FixedRouter(0.69), 0.7, "q").unwrap();
        assert_eq!(d.model, ModelChoice::Weak);
        let d = route(&FixedRouter(0.0), 0.0, "q").unwrap();
        assert_eq!(d.model, ModelChoice::Strong);
        assert!(route(&FixedRouter(0.5), 1.5, "q").is_err());
    }

    #[test]
    fn median_convention_yields_half_selection_under_geq() {
        // Enumerate both median conventions on an even-sized multiset and
        // keep the one whose >= selection rate is exactly one half.
        let rates = [0.1, 0.2, 0.3, 0.4];
        let lower = 0.2;
        let upper = 0.3;
        let rate = |alpha: f64| rates.iter().filter(|&&w| w >= alpha).count() as f64 / 4.0;
        assert_eq!(rate(lower), 0.75);
        assert_eq!(rate(upper), 0.5);
        assert_eq!(median_threshold(&rates).unwrap(), upper);
    }

    #[test]
    fn odd_sized_median_is_the_middle_element() {
        assert_eq!(median_threshold(&[0.1, 0.5, 0.9]).unwrap(), 0.5);
        assert!(median_threshold(&[]).is_err());
    }

    #[test]
    fn win_rate_rejects_out_of_range() {
        assert!(WinRate::new(-0.1).is_err());
        assert!(WinRate::new(1.1).is_err());
        assert!(WinRate::new(f64::NAN).is_err());
        assert!(WinRate::new(0.0).is_ok());
        assert!(WinRate::new(1.0).is_ok());
    }

    #[test]
    fn tau_bounds() {
        assert!(ScoreThresholdTau::new(0).is_err());
        assert!(ScoreThresholdTau::new(6).is_err());
        assert_eq!(ScoreThresholdTau::default().get(), 4);
    }
}
