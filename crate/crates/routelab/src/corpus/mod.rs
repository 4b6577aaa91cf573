//! Corpus generation, preference synthesis, pool selection, splits, and
//! adversarial augmentation.
//!
//! Everything here is a pure function of its inputs and a seed; per-query
//! draws are keyed by `(seed, query id)` so growing a corpus never
//! reshuffles existing items.

mod templates;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::map_batch;
use crate::routers::{CalibratedRouter, Router};
use crate::seeding::derive_rng;

/// Canonical trigger-set size per attack method.
pub const TRIGGERS_PER_METHOD: usize = 50;

// ── Domain types ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Simple,
    Complex,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

/// The unit everything routes, attacks, and classifies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub complexity: Complexity,
    pub origin: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMethod {
    GrayBox,
    WhiteBox,
    BoxFree,
}

impl TriggerMethod {
    pub const ALL: [TriggerMethod; 3] = [
        TriggerMethod::GrayBox,
        TriggerMethod::WhiteBox,
        TriggerMethod::BoxFree,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TriggerMethod::GrayBox => "graybox",
            TriggerMethod::WhiteBox => "whitebox",
            TriggerMethod::BoxFree => "boxfree",
        }
    }
}

/// An adversarial prefix with method provenance and split assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub id: String,
    pub method: TriggerMethod,
    pub text: String,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    StrongWins,
    Tie,
    WeakWins,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub query_id: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub split: Split,
    pub complexity: Complexity,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub generator_version: String,
    pub counts: Vec<CountRecord>,
}

impl CorpusManifest {
    pub fn from_queries(seed: u64, queries: &[Query]) -> Self {
        let mut by_key: BTreeMap<(u8, u8), usize> = BTreeMap::new();
        for q in queries {
            let s = match q.split {
                Split::Train => 0u8,
                Split::Val => 1,
                Split::Test => 2,
                Split::Unassigned => 3,
            };
            let c = match q.complexity {
                Complexity::Simple => 0u8,
                Complexity::Complex => 1,
                Complexity::Unknown => 2,
            };
            *by_key.entry((s, c)).or_insert(0) += 1;
        }
        let counts = by_key
            .into_iter()
            .map(|((s, c), count)| CountRecord {
                split: [Split::Train, Split::Val, Split::Test, Split::Unassigned][s as usize],
                complexity: [Complexity::Simple, Complexity::Complex, Complexity::Unknown]
                    [c as usize],
                count,
            })
            .collect();
        CorpusManifest {
            seed,
            generator_version: crate::GENERATOR_VERSION.to_string(),
            counts,
        }
    }

    /// Check the recorded counts against actual contents.
    pub fn verify(&self, queries: &[Query]) -> Result<()> {
        let recount = CorpusManifest::from_queries(self.seed, queries);
        if recount.counts != self.counts {
            return Err(Error::invalid("manifest counts do not match corpus"));
        }
        Ok(())
    }
}

// ── Generation ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusParams {
    pub n_simple: usize,
    pub n_complex: usize,
    /// Fraction of queries rendered in the other class's lexical style
    /// (labels are unaffected), so the two populations overlap.
    pub noise_fraction: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            n_simple: 1000,
            n_complex: 1000,
            noise_fraction: 0.1,
        }
    }
}

fn render_query(rng: &mut impl Rng, styled_complex: bool) -> String {
    let bank = if styled_complex {
        templates::COMPLEX_TEMPLATES
    } else {
        templates::SIMPLE_TEMPLATES
    };
    let template = bank[rng.gen_range(0..bank.len())];
    let noun_a = templates::NOUNS[rng.gen_range(0..templates::NOUNS.len())];
    let noun_b = templates::NOUNS[rng.gen_range(0..templates::NOUNS.len())];
    let place = templates::PLACES[rng.gen_range(0..templates::PLACES.len())];
    let day = templates::DAYS[rng.gen_range(0..templates::DAYS.len())];
    let marker = templates::MARKER_WORDS[rng.gen_range(0..templates::MARKER_WORDS.len())];
    let nums = [
        rng.gen_range(2..90u32),
        rng.gen_range(2..90u32),
        rng.gen_range(2..90u32),
        rng.gen_range(2..90u32),
        rng.gen_range(2..90u32),
    ];
    templates::fill(template, (noun_a, noun_b), place, day, marker, &nums)
}

/// Deterministic templated corpus: `n_simple` + `n_complex` queries whose
/// lexical styles overlap by `noise_fraction`.
pub fn generate_synthetic_corpus(seed: u64, params: &CorpusParams) -> Result<Vec<Query>> {
    if params.n_simple == 0 || params.n_complex == 0 {
        return Err(Error::invalid("query counts must be > 0"));
    }
    let total = params.n_simple + params.n_complex;
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let complexity = if i < params.n_simple {
            Complexity::Simple
        } else {
            Complexity::Complex
        };
        let mut rng = derive_rng(seed, "corpus-query", i as u64);
        let noisy = rng.gen::<f64>() < params.noise_fraction;
        let styled_complex = matches!(complexity, Complexity::Complex) ^ noisy;
        let text = render_query(&mut rng, styled_complex);
        out.push(Query {
            id: format!("q{i:06}"),
            text,
            complexity,
            origin: "synthetic".to_string(),
            split: Split::Unassigned,
        });
    }
    Ok(out)
}

// ── Preference synthesis ───────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceParams {
    pub p_strong_complex: f64,
    pub p_strong_simple: f64,
    pub tie_prob: f64,
}

impl Default for PreferenceParams {
    fn default() -> Self {
        PreferenceParams {
            p_strong_complex: 0.85,
            p_strong_simple: 0.15,
            tie_prob: 0.1,
        }
    }
}

/// One outcome per query: StrongWins with the class probability, Tie with
/// `tie_prob`, remainder WeakWins; keyed by `(seed, query id)`.
pub fn synthesize_preferences(
    corpus: &[Query],
    seed: u64,
    params: &PreferenceParams,
) -> Result<Vec<PreferenceRecord>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("corpus".into()));
    }
    let mut out = Vec::with_capacity(corpus.len());
    for q in corpus {
        let p_strong = match q.complexity {
            Complexity::Complex => params.p_strong_complex,
            Complexity::Simple => params.p_strong_simple,
            Complexity::Unknown => 0.5 * (params.p_strong_complex + params.p_strong_simple),
        };
        let mut rng = derive_rng(seed, &format!("preference:{}", q.id), 0);
        let u: f64 = rng.gen();
        let outcome = if u < p_strong {
            Outcome::StrongWins
        } else if u < p_strong + params.tie_prob {
            Outcome::Tie
        } else {
            Outcome::WeakWins
        };
        out.push(PreferenceRecord {
            query_id: q.id.clone(),
            outcome,
        });
    }
    Ok(out)
}

// ── Pool selection ─────────────────────────────────────────────────────

fn check_same_calibration_corpus(routers: &[CalibratedRouter]) -> Result<()> {
    if routers.is_empty() {
        return Err(Error::EmptyInput("router set".into()));
    }
    let first = &routers[0].threshold.corpus_id;
    if routers
        .iter()
        .any(|r| &r.threshold.corpus_id != first)
    {
        return Err(Error::invalid(
            "routers are calibrated on different corpora",
        ));
    }
    Ok(())
}

fn pool_by<F: Fn(f64, f64) -> bool + Sync>(
    corpus: &[Query],
    routers: &[CalibratedRouter],
    keep: F,
) -> Result<Vec<Query>> {
    check_same_calibration_corpus(routers)?;
    let mut keep_flags = vec![true; corpus.len()];
    for r in routers {
        let rates = map_batch(corpus, |q| r.router.win_rate(&q.text));
        for (flag, rate) in keep_flags.iter_mut().zip(rates.into_iter()) {
            let rate = rate?;
            if !keep(rate.value(), r.threshold.alpha) {
                *flag = false;
            }
        }
    }
    let mut pool: Vec<Query> = corpus
        .iter()
        .zip(keep_flags)
        .filter(|(_, keep)| *keep)
        .map(|(q, _)| q.clone())
        .collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(pool)
}

/// Queries strictly below every router's calibrated median.
pub fn select_normal_pool(corpus: &[Query], routers: &[CalibratedRouter]) -> Result<Vec<Query>> {
    pool_by(corpus, routers, |wr, alpha| wr < alpha)
}

/// Queries at or above every router's calibrated median; disjoint from
/// the normal pool by construction.
pub fn select_complex_pool(corpus: &[Query], routers: &[CalibratedRouter]) -> Result<Vec<Query>> {
    pool_by(corpus, routers, |wr, alpha| wr >= alpha)
}

// ── Splits ─────────────────────────────────────────────────────────────

fn seeded_shuffle<T>(items: &mut [T], seed: u64, label: &str) {
    let mut rng = derive_rng(seed, label, 0);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Assign Train/Val/Test in an 8:1:1 ratio over a pool of at least 10
/// queries. Sizes are `floor(0.8n)` / `floor(0.1n)` / remainder.
pub fn split_queries(pool: &[Query], seed: u64) -> Result<Vec<Query>> {
    if pool.len() < 10 {
        return Err(Error::invalid(format!(
            "pool too small to split: {} < 10",
            pool.len()
        )));
    }
    if pool.iter().any(|q| q.split != Split::Unassigned) {
        return Err(Error::invalid("query split already assigned"));
    }
    let n = pool.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut order: Vec<usize> = (0..n).collect();
    seeded_shuffle(&mut order, seed, "query-split");
    let mut out = pool.to_vec();
    for (rank, &idx) in order.iter().enumerate() {
        out[idx].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

/// Build split trigger records from per-method texts in a 6:2:2 ratio.
/// Every method must contribute the same count, divisible by 5
/// (canonically [`TRIGGERS_PER_METHOD`] = 50, giving 30/10/10).
pub fn split_triggers(
    texts_by_method: &BTreeMap<TriggerMethod, Vec<String>>,
    seed: u64,
) -> Result<Vec<Trigger>> {
    if texts_by_method.is_empty() {
        return Err(Error::EmptyInput("trigger sets".into()));
    }
    let n = texts_by_method.values().next().unwrap().len();
    if n == 0 || n % 5 != 0 || texts_by_method.values().any(|v| v.len() != n) {
        return Err(Error::invalid(format!(
            "each method needs the same trigger count divisible by 5 (canonical {TRIGGERS_PER_METHOD}); got {:?}",
            texts_by_method
                .iter()
                .map(|(m, v)| (m.as_str(), v.len()))
                .collect::<Vec<_>>()
        )));
    }
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let mut out = Vec::with_capacity(n * texts_by_method.len());
    for (method, texts) in texts_by_method {
        let mut order: Vec<usize> = (0..n).collect();
        seeded_shuffle(&mut order, seed, &format!("trigger-split:{}", method.as_str()));
        let mut splits = vec![Split::Test; n];
        for (rank, &idx) in order.iter().enumerate() {
            splits[idx] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        for (i, text) in texts.iter().enumerate() {
            if text.is_empty() {
                return Err(Error::invalid("trigger text must be non-empty"));
            }
            out.push(Trigger {
                id: format!("t-{}-{i:03}", method.as_str()),
                method: *method,
                text: text.clone(),
                split: splits[i],
            });
        }
    }
    Ok(out)
}

// ── Adversarial augmentation ───────────────────────────────────────────

/// Prepend a trigger to a query with a single-space join. The complexity
/// label is copied; the origin records the attack method.
pub fn make_adversarial(query: &Query, trigger: &Trigger) -> Result<Query> {
    if query.text.is_empty() || trigger.text.is_empty() {
        return Err(Error::EmptyInput("query or trigger text".into()));
    }
    Ok(Query {
        id: format!("{}::{}", query.id, trigger.id),
        text: format!("{} {}", trigger.text, query.text),
        complexity: query.complexity,
        origin: format!("adv:{}", trigger.method.as_str()),
        split: query.split,
    })
}

// ── JSON-Lines IO ──────────────────────────────────────────────────────

pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
