//! Quantitative measurements: attack success rate, selection rate,
//! confidence gain, simulated benchmark scores, detection metrics,
//! representation PCA, trigger-pattern statistics, and CDF tables.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{perplexity, NGramLm};
use crate::corpus::{Complexity, Query};
use crate::error::{Error, Result};
use crate::routers::ModelChoice;
use crate::seeding::derive_rng;
use rand::Rng;

// ── Simulated model backends ───────────────────────────────────────────

/// Stand-in for a live model: a per-complexity accuracy profile with
/// deterministic per-(seed, query) correctness draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSimulator {
    pub role: ModelChoice,
    pub accuracy_simple: f64,
    pub accuracy_complex: f64,
    pub seed: u64,
}

impl ModelSimulator {
    pub fn strong(seed: u64) -> Self {
        ModelSimulator {
            role: ModelChoice::Strong,
            accuracy_simple: 0.9,
            accuracy_complex: 0.75,
            seed,
        }
    }

    pub fn weak(seed: u64) -> Self {
        ModelSimulator {
            role: ModelChoice::Weak,
            accuracy_simple: 0.8,
            accuracy_complex: 0.2,
            seed,
        }
    }

    fn accuracy_for(&self, complexity: Complexity) -> f64 {
        match complexity {
            Complexity::Simple => self.accuracy_simple,
            Complexity::Complex => self.accuracy_complex,
            Complexity::Unknown => 0.5 * (self.accuracy_simple + self.accuracy_complex),
        }
    }

    /// The simulated answer-correctness flag for a query.
    pub fn is_correct(&self, query: &Query) -> bool {
        let role = match self.role {
            ModelChoice::Strong => "strong",
            ModelChoice::Weak => "weak",
        };
        let mut rng = derive_rng(self.seed, &format!("simulate:{role}:{}", query.id), 0);
        rng.gen::<f64>() < self.accuracy_for(query.complexity)
    }
}

// ── Attack metrics ─────────────────────────────────────────────────────

/// Attack success rate. For a Strong target: among queries whose clean
/// win rate was below alpha, the fraction pushed to or above alpha. For a
/// Weak target the condition is reversed. `None` when no query is
/// eligible.
pub fn asr(
    win_before: &[f64],
    win_after: &[f64],
    alpha: f64,
    target: ModelChoice,
) -> Result<Option<f64>> {
    if win_before.len() != win_after.len() {
        return Err(Error::dim(win_before.len(), win_after.len(), "asr"));
    }
    let mut eligible = 0usize;
    let mut crossed = 0usize;
    for (&b, &a) in win_before.iter().zip(win_after.iter()) {
        match target {
            ModelChoice::Strong => {
                if b < alpha {
                    eligible += 1;
                    if a >= alpha {
                        crossed += 1;
                    }
                }
            }
            ModelChoice::Weak => {
                if b >= alpha {
                    eligible += 1;
                    if a < alpha {
                        crossed += 1;
                    }
                }
            }
        }
    }
    Ok(if eligible == 0 {
        None
    } else {
        Some(crossed as f64 / eligible as f64)
    })
}

/// Fraction of queries routed to the target model under the threshold
/// rule; `None` on empty input.
pub fn selection_rate(win_rates: &[f64], alpha: f64, target: ModelChoice) -> Option<f64> {
    if win_rates.is_empty() {
        return None;
    }
    let hits = win_rates
        .iter()
        .filter(|&&w| match target {
            ModelChoice::Strong => w >= alpha,
            ModelChoice::Weak => w < alpha,
        })
        .count();
    Some(hits as f64 / win_rates.len() as f64)
}

/// Adversarial confidence gain: mean change in the strong-model win rate.
pub fn acg(win_before: &[f64], win_after: &[f64]) -> Result<f64> {
    if win_before.len() != win_after.len() {
        return Err(Error::dim(win_before.len(), win_after.len(), "acg"));
    }
    if win_before.is_empty() {
        return Err(Error::EmptyInput("acg input".into()));
    }
    let sum: f64 = win_before
        .iter()
        .zip(win_after.iter())
        .map(|(b, a)| a - b)
        .sum();
    Ok(sum / win_before.len() as f64)
}

/// 100 x accuracy of the selected model's simulated answers.
pub fn benchmark_score(
    queries: &[Query],
    choices: &[ModelChoice],
    strong: &ModelSimulator,
    weak: &ModelSimulator,
) -> Result<f64> {
    if queries.len() != choices.len() {
        return Err(Error::dim(queries.len(), choices.len(), "benchmark score"));
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("benchmark queries".into()));
    }
    let correct = queries
        .iter()
        .zip(choices.iter())
        .filter(|(q, c)| match c {
            ModelChoice::Strong => strong.is_correct(q),
            ModelChoice::Weak => weak.is_correct(q),
        })
        .count();
    Ok(100.0 * correct as f64 / queries.len() as f64)
}

// ── Detection metrics ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Standard confusion-matrix metrics with the adversarial class as
/// positive; F1 is 0 when precision + recall is 0.
pub fn detection_metrics(predictions: &[bool], labels: &[bool]) -> Result<DetectionMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::dim(predictions.len(), labels.len(), "detection"));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("detection input".into()));
    }
    let (mut tp, mut fp, mut tn, mut fnn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels.iter()) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / predictions.len() as f64;
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fnn == 0 {
        0.0
    } else {
        tp as f64 / (tp + fnn) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(DetectionMetrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

// ── Representation PCA ─────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pca2d {
    /// Projected coordinates, one pair per input point.
    pub coords: Vec<[f64; 2]>,
    /// Variance captured by each component, descending.
    pub explained: [f64; 2],
    pub components: [Vec<f64>; 2],
}

fn mat_vec(cov: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d)
        .map(|i| {
            cov[i * d..(i + 1) * d]
                .iter()
                .zip(v.iter())
                .map(|(c, x)| c * x)
                .sum()
        })
        .collect()
}

fn power_iterate(cov: &[f64], d: usize) -> (Vec<f64>, f64) {
    let mut rng = derive_rng(0x9ca, "pca-power", 0);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
    crate::embed::l2_normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let mut next = mat_vec(cov, d, &v);
        let norm = crate::embed::l2_norm(&next);
        if norm < 1e-14 {
            return (vec![0.0; d], 0.0);
        }
        for x in next.iter_mut() {
            *x /= norm;
        }
        let drift: f64 = next
            .iter()
            .zip(v.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        lambda = norm;
        if drift < 1e-13 {
            break;
        }
    }
    // Sign convention: largest-magnitude component positive.
    let lead = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if v[lead] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    (v, lambda)
}

/// Mean-center and project onto the top-2 eigenvectors of the covariance,
/// found by power iteration with deflation.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Pca2d> {
    if points.len() < 3 {
        return Err(Error::invalid("pca needs at least 3 points"));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("pca points have mixed dimensions"));
    }
    let n = points.len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(mean.iter()).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for c in &centered {
        for i in 0..d {
            let ci = c[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += ci * c[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for x in cov.iter_mut() {
        *x /= denom;
    }
    let total_var: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total_var < 1e-14 {
        log::warn!("degenerate covariance in pca_2d; returning zeros");
        return Ok(Pca2d {
            coords: vec![[0.0, 0.0]; n],
            explained: [0.0, 0.0],
            components: [vec![0.0; d], vec![0.0; d]],
        });
    }
    let (v1, l1) = power_iterate(&cov, d);
    // Deflate and repeat.
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, l2) = power_iterate(&cov, d);
    let coords = centered
        .iter()
        .map(|c| {
            [
                c.iter().zip(v1.iter()).map(|(x, v)| x * v).sum(),
                c.iter().zip(v2.iter()).map(|(x, v)| x * v).sum(),
            ]
        })
        .collect();
    Ok(Pca2d {
        coords,
        explained: [l1, l2],
        components: [v1, v2],
    })
}

// ── Trigger-pattern statistics ─────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub group: String,
    pub mean_ppl: f64,
    /// Mean length in unicode scalar values.
    pub mean_chars: f64,
}

/// Per-group mean perplexity and character length.
pub fn trigger_pattern_stats(
    groups: &[(String, Vec<String>)],
    lm: &NGramLm,
) -> Result<Vec<PatternStats>> {
    let mut out = Vec::with_capacity(groups.len());
    for (name, texts) in groups {
        if texts.is_empty() {
            return Err(Error::EmptyInput(format!("pattern group {name}")));
        }
        let mut ppl_sum = 0.0;
        let mut char_sum = 0usize;
        for t in texts {
            ppl_sum += perplexity(lm, t)?;
            char_sum += t.chars().count();
        }
        out.push(PatternStats {
            group: name.clone(),
            mean_ppl: ppl_sum / texts.len() as f64,
            mean_chars: char_sum as f64 / texts.len() as f64,
        });
    }
    Ok(out)
}

// ── Empirical CDF ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: f64,
    pub fraction: f64,
}

/// Sorted values with cumulative fractions; ends at 1.0.
pub fn asr_cdf(values: &[f64]) -> Vec<CdfPoint> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, value)| CdfPoint {
            value,
            fraction: (i + 1) as f64 / n as f64,
        })
        .collect()
}

/// Smallest value whose cumulative fraction reaches one half.
pub fn cdf_median(cdf: &[CdfPoint]) -> Option<f64> {
    cdf.iter().find(|p| p.fraction >= 0.5).map(|p| p.value)
}

// ── Jailbreak judging (interface only) ─────────────────────────────────

/// Judge for response harmfulness. No default implementation ships: the
/// score requires an external harmful-content classifier.
pub trait HarmJudge {
    fn is_harmful(&self, response: &str) -> bool;
}

/// Fraction of responses the judge flags; `None` on empty input.
pub fn jailbreak_success_rate<J: HarmJudge + ?Sized>(
    judge: &J,
    responses: &[String],
) -> Option<f64> {
    if responses.is_empty() {
        return None;
    }
    let hits = responses.iter().filter(|r| judge.is_harmful(r)).count();
    Some(hits as f64 / responses.len() as f64)
}

// ── Report tables ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub router: String,
    pub attack: Option<String>,
    pub target: String,
    pub benchmark_score: f64,
    pub selection_rate: Option<f64>,
    pub asr: Option<f64>,
    pub acg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub defense: String,
    pub benign_set: String,
    pub method: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub benign_block_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationRow {
    pub router: String,
    pub defense: String,
    pub method: String,
    pub post_asr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRow {
    pub router: String,
    pub method: String,
    pub adaptive: bool,
    pub mean_guard_prob: f64,
    pub post_asr: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfGroup {
    pub group: String,
    pub points: Vec<CdfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoints {
    pub labels: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub explained: [f64; 2],
}

/// All emitted measurements for one experiment run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub routing: Vec<RoutingRow>,
    pub detection: Vec<DetectionRow>,
    pub mitigation: Vec<MitigationRow>,
    pub adaptive: Vec<AdaptiveRow>,
    pub patterns: Vec<PatternStats>,
    pub cdf_groups: Vec<CdfGroup>,
    pub pca_points: Option<PcaPoints>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ReportLine {
    Routing(RoutingRow),
    Detection(DetectionRow),
    Mitigation(MitigationRow),
    Adaptive(AdaptiveRow),
    Pattern(PatternStats),
    Cdf(CdfGroup),
    Pca(PcaPoints),
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Serialize as tagged JSON-Lines.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut jsonl = std::io::BufWriter::new(std::fs::File::create(path)?);
        let lines: Vec<ReportLine> = self
            .routing
            .iter()
            .cloned()
            .map(ReportLine::Routing)
            .chain(self.detection.iter().cloned().map(ReportLine::Detection))
            .chain(self.mitigation.iter().cloned().map(ReportLine::Mitigation))
            .chain(self.adaptive.iter().cloned().map(ReportLine::Adaptive))
            .chain(self.patterns.iter().cloned().map(ReportLine::Pattern))
            .chain(self.cdf_groups.iter().cloned().map(ReportLine::Cdf))
            .chain(self.pca_points.iter().cloned().map(ReportLine::Pca))
            .collect();
        for line in &lines {
            serde_json::to_writer(&mut jsonl, line)?;
            jsonl.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let mut report = EvalReport::default();
        let lines: Vec<ReportLine> = crate::corpus::load_jsonl(path)?;
        for line in lines {
            match line {
                ReportLine::Routing(r) => report.routing.push(r),
                ReportLine::Detection(r) => report.detection.push(r),
                ReportLine::Mitigation(r) => report.mitigation.push(r),
                ReportLine::Adaptive(r) => report.adaptive.push(r),
                ReportLine::Pattern(r) => report.patterns.push(r),
                ReportLine::Cdf(r) => report.cdf_groups.push(r),
                ReportLine::Pca(r) => report.pca_points = Some(r),
            }
        }
        Ok(report)
    }

    /// Write `report.jsonl` plus one CSV per table into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.save_jsonl(&dir.join("report.jsonl"))?;

        let mut csv = String::from("router,attack,target,benchmark_score,selection_rate,asr,acg\n");
        for r in &self.routing {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.router,
                r.attack.clone().unwrap_or_default(),
                r.target,
                r.benchmark_score,
                fmt_opt(r.selection_rate),
                fmt_opt(r.asr),
                fmt_opt(r.acg),
            ));
        }
        std::fs::write(dir.join("routing.csv"), csv)?;

        let mut csv =
            String::from("defense,benign_set,method,accuracy,precision,recall,f1,benign_block_rate\n");
        for r in &self.detection {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.defense,
                r.benign_set,
                r.method,
                r.accuracy,
                r.precision,
                r.recall,
                r.f1,
                r.benign_block_rate,
            ));
        }
        std::fs::write(dir.join("detection.csv"), csv)?;

        let mut csv = String::from("router,defense,method,post_asr\n");
        for r in &self.mitigation {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                r.router,
                r.defense,
                r.method,
                fmt_opt(r.post_asr)
            ));
        }
        std::fs::write(dir.join("mitigation.csv"), csv)?;

        let mut csv = String::from("router,method,adaptive,mean_guard_prob,post_asr,seeds\n");
        for r in &self.adaptive {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.router,
                r.method,
                r.adaptive,
                r.mean_guard_prob,
                fmt_opt(r.post_asr),
                r.seeds
            ));
        }
        std::fs::write(dir.join("adaptive.csv"), csv)?;

        let mut csv = String::from("group,mean_ppl,mean_chars\n");
        for r in &self.patterns {
            csv.push_str(&format!("{},{},{}\n", r.group, r.mean_ppl, r.mean_chars));
        }
        std::fs::write(dir.join("patterns.csv"), csv)?;
        Ok(())
    }
}

/// Two-column point file for external plotting.
pub fn write_cdf_points(path: &Path, cdf: &[CdfPoint]) -> Result<()> {
    let mut out = String::new();
    for p in cdf {
        out.push_str(&format!("{} {}\n", p.value, p.fraction));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Labeled 2-D point file: `label x y` per line.
pub fn write_pca_points(path: &Path, labels: &[String], pca: &Pca2d) -> Result<()> {
    if labels.len() != pca.coords.len() {
        return Err(Error::dim(labels.len(), pca.coords.len(), "pca points"));
    }
    let mut out = String::new();
    for (label, xy) in labels.iter().zip(pca.coords.iter()) {
        out.push_str(&format!("{label} {} {}\n", xy[0], xy[1]));
    }
    std::fs::write(path, out)?;
    Ok(())
}
