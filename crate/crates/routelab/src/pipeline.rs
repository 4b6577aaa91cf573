//! End-to-end experiment stages over a versioned artifact directory.
//!
//! Stage order: `gen-data`, `train-routers`, `calibrate`, `attack`,
//! `train-guard`, `eval`, `report`. Every stage records a manifest with
//! the config hash and the hashes of the files it read and wrote;
//! downstream stages refuse to run against missing or stale artifacts.
//! All randomness derives from the single root seed through labeled
//! streams, so rerunning any stage with unchanged inputs reproduces its
//! outputs byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{
    adaptive_graybox, adaptive_whitebox, boxfree_optimize, graybox_optimize, whitebox_optimize,
    AdaptiveGuard, AttackConfig, AttackRunRecord, LogOddsSummarizer,
};
use crate::baselines::{
    calibrate_ppl_threshold, multi_router_route, perplexity, NGramLm, DEFAULT_ADD_K,
};
use crate::corpus::{
    self, generate_synthetic_corpus, load_jsonl, save_jsonl,
    select_complex_pool, select_normal_pool, split_queries, split_triggers, synthesize_preferences,
    CorpusManifest, CorpusParams, PreferenceParams, PreferenceRecord, Query, Split, Trigger,
    TriggerMethod,
};
use crate::embed::{embed_hashed, Vocab};
use crate::error::{Error, Result};
use crate::guard::{
    build_adversarial_split, build_pair_dataset, deploy_vote, train_guard,
    train_single_query_baseline, GuardConfig, SiameseModel, SingleQueryDetector, VoteRecord,
};
use crate::metrics::{
    acg, asr, asr_cdf, benchmark_score, detection_metrics, pca_2d, selection_rate,
    trigger_pattern_stats, AdaptiveRow, CdfGroup, DetectionRow, EvalReport, MitigationRow,
    ModelSimulator, PcaPoints, RoutingRow,
};
use crate::nn::TrainConfig;
use crate::parallel::map_batch;
use crate::routers::{
    calibrate, train_router, AnyRouter, CalibratedRouter, CalibratedThreshold, ModelChoice,
    Router, RouterKind,
};
use crate::seeding::{derive_rng, derive_seed};
use crate::GateDecision;
use rand::Rng;

// ── Configuration ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSettings {
    pub trigger_len: usize,
    pub iterations: usize,
    pub neighbors_per_step: usize,
    pub topk_candidates: usize,
    pub whitebox_batch: usize,
    /// Trigger-set size per method for the guard pipeline (split 6:2:2).
    pub triggers_per_method: usize,
    /// Standalone run-batch size for the attack stage CLI.
    pub runs_per_batch: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        AttackSettings {
            trigger_len: 10,
            iterations: 400,
            neighbors_per_step: 48,
            topk_candidates: 8,
            whitebox_batch: 256,
            triggers_per_method: corpus::TRIGGERS_PER_METHOD,
            runs_per_batch: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub adaptive_seeds: usize,
    pub adaptive_penalty: f64,
    pub adaptive_alpha: f64,
    pub adaptive_beta: f64,
    pub adaptive_epsilon: f64,
    pub adaptive_iterations: usize,
    pub adaptive_whitebox_batch: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            adaptive_seeds: 5,
            adaptive_penalty: 0.5,
            adaptive_alpha: 0.5,
            adaptive_beta: 0.5,
            adaptive_epsilon: 1e-8,
            adaptive_iterations: 120,
            adaptive_whitebox_batch: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub root_seed: u64,
    pub corpus: CorpusParams,
    pub preferences: PreferenceParams,
    pub router_epochs: usize,
    pub attack: AttackSettings,
    pub guard: GuardConfig,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            root_seed: 42,
            corpus: CorpusParams::default(),
            preferences: PreferenceParams::default(),
            router_epochs: 24,
            attack: AttackSettings::default(),
            guard: GuardConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.guard.validate()?;
        if self.eval.adaptive_seeds == 0 {
            return Err(Error::Config("adaptive_seeds must be >= 1".into()));
        }
        Ok(())
    }
}

// ── Artifact bookkeeping ───────────────────────────────────────────────

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_digest(&hasher.finalize()))
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Checkpoint container: format version plus the serialized model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub data: T,
}

pub const CHECKPOINT_VERSION: u32 = 1;

fn save_checkpoint<T: Serialize>(path: &Path, data: &T) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        data,
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

fn load_checkpoint<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let ckpt: Checkpoint<T> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::MalformedArtifact {
            path: path.display().to_string(),
            detail: format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            ),
        });
    }
    Ok(ckpt.data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    config_hash: String,
}

pub const STAGES: [&str; 7] = [
    "gen-data",
    "train-routers",
    "calibrate",
    "attack",
    "train-guard",
    "eval",
    "report",
];

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&cfg)?);
        let config_hash = hex_digest(&hasher.finalize());
        Ok(Pipeline {
            cfg,
            out: out.into(),
            config_hash,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p.display().to_string(),
                stage: producer.to_string(),
            });
        }
        Ok(p)
    }

    /// Check an upstream manifest exists and was produced by this config.
    fn check_upstream(&self, stage: &str) -> Result<()> {
        let p = self.require(&format!("manifests/{stage}.json"), stage)?;
        let manifest: StageManifest = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
        if manifest.config_hash != self.config_hash {
            return Err(Error::StaleArtifact {
                path: p.display().to_string(),
                stage: stage.to_string(),
                detail: "config hash changed".into(),
            });
        }
        Ok(())
    }

    fn write_manifest(
        &self,
        stage: &str,
        inputs: &[&str],
        outputs: &[&str],
    ) -> Result<()> {
        let collect = |rels: &[&str]| -> Result<BTreeMap<String, String>> {
            rels.iter()
                .map(|r| Ok((r.to_string(), file_hash(&self.path(r))?)))
                .collect()
        };
        let manifest = StageManifest {
            stage: stage.to_string(),
            config_hash: self.config_hash.clone(),
            inputs: collect(inputs)?,
            outputs: collect(outputs)?,
        };
        std::fs::create_dir_all(self.path("manifests"))?;
        std::fs::write(
            self.path(&format!("manifests/{stage}.json")),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    fn seed(&self, label: &str, index: u64) -> u64 {
        derive_seed(self.cfg.root_seed, label, index)
    }

    // ── Stage: gen-data ────────────────────────────────────────────────

    pub fn gen_data(&self) -> Result<()> {
        std::fs::create_dir_all(self.path("corpus"))?;
        let queries = generate_synthetic_corpus(self.cfg.root_seed, &self.cfg.corpus)?;
        let prefs = synthesize_preferences(&queries, self.cfg.root_seed, &self.cfg.preferences)?;
        let vocab = Vocab::from_texts(queries.iter().map(|q| q.text.as_str()));
        save_jsonl(&self.path("corpus/queries.jsonl"), &queries)?;
        save_jsonl(&self.path("corpus/preferences.jsonl"), &prefs)?;
        vocab.save(&self.path("corpus/vocab.txt"))?;
        let manifest = CorpusManifest::from_queries(self.cfg.root_seed, &queries);
        std::fs::write(
            self.path("corpus/manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        self.write_manifest(
            "gen-data",
            &[],
            &[
                "corpus/queries.jsonl",
                "corpus/preferences.jsonl",
                "corpus/vocab.txt",
                "corpus/manifest.json",
            ],
        )
    }

    pub fn load_corpus(&self) -> Result<(Vec<Query>, Vec<PreferenceRecord>, Vocab)> {
        let queries: Vec<Query> =
            load_jsonl(&self.require("corpus/queries.jsonl", "gen-data")?)?;
        let prefs: Vec<PreferenceRecord> =
            load_jsonl(&self.require("corpus/preferences.jsonl", "gen-data")?)?;
        let vocab = Vocab::load(&self.require("corpus/vocab.txt", "gen-data")?)?;
        let manifest: CorpusManifest = serde_json::from_str(&std::fs::read_to_string(
            self.require("corpus/manifest.json", "gen-data")?,
        )?)?;
        manifest.verify(&queries)?;
        Ok((queries, prefs, vocab))
    }

    // ── Stage: train-routers ───────────────────────────────────────────

    fn router_train_config(&self, kind: RouterKind) -> TrainConfig {
        TrainConfig {
            max_epochs: self.cfg.router_epochs,
            seed: self.seed("router-train", kind as u64),
            // Light decay on the token table: routers keep sharply tuned
            // rows, which is what trigger optimization exploits.
            weight_decay_backbone: 0.001,
            ..TrainConfig::default()
        }
    }

    pub fn train_routers(&self) -> Result<()> {
        self.check_upstream("gen-data")?;
        let (queries, prefs, vocab) = self.load_corpus()?;
        std::fs::create_dir_all(self.path("routers"))?;
        let mut outputs = Vec::new();
        for kind in RouterKind::ALL {
            let router = train_router(kind, &queries, &prefs, &vocab, &self.router_train_config(kind))?;
            let rel = format!("routers/{}.json", kind.as_str());
            save_checkpoint(&self.path(&rel), &router)?;
            outputs.push(rel);
        }
        let out_refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
        self.write_manifest("train-routers", &["corpus/queries.jsonl"], &out_refs)
    }

    fn load_router(&self, kind: RouterKind, queries: &[Query]) -> Result<AnyRouter> {
        let rel = format!("routers/{}.json", kind.as_str());
        let p = self.require(&rel, "train-routers")?;
        let mut router: AnyRouter = load_checkpoint(&p)?;
        if let AnyRouter::Sw(sw) = &mut router {
            sw.rebuild_embeddings(queries)?;
        }
        Ok(router)
    }

    pub fn corpus_id(&self) -> Result<String> {
        let hash = file_hash(&self.require("corpus/queries.jsonl", "gen-data")?)?;
        Ok(format!("corpus:{}", &hash[..12]))
    }

    // ── Stage: calibrate ───────────────────────────────────────────────

    pub fn calibrate(&self) -> Result<()> {
        self.check_upstream("train-routers")?;
        let (queries, _, _) = self.load_corpus()?;
        let corpus_id = self.corpus_id()?;
        let mut calibrated = Vec::new();
        let mut outputs: Vec<String> = Vec::new();
        for kind in RouterKind::ALL {
            let router = self.load_router(kind, &queries)?;
            let cal = calibrate(router, &queries, &corpus_id)?;
            let rel = format!("routers/{}.calib.json", kind.as_str());
            std::fs::write(self.path(&rel), serde_json::to_string_pretty(&cal.threshold)?)?;
            outputs.push(rel);
            calibrated.push(cal);
        }

        std::fs::create_dir_all(self.path("pools"))?;
        let normal = select_normal_pool(&queries, &calibrated)?;
        let complex = select_complex_pool(&queries, &calibrated)?;
        let normal = split_queries(&normal, self.seed("normal-pool-split", 0))?;
        save_jsonl(&self.path("pools/normal.jsonl"), &normal)?;
        save_jsonl(&self.path("pools/complex.jsonl"), &complex)?;
        outputs.push("pools/normal.jsonl".into());
        outputs.push("pools/complex.jsonl".into());
        let out_refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
        self.write_manifest("calibrate", &["corpus/queries.jsonl"], &out_refs)
    }

    pub fn load_calibrated_routers(&self) -> Result<Vec<CalibratedRouter>> {
        let (queries, _, _) = self.load_corpus()?;
        RouterKind::ALL
            .iter()
            .map(|&kind| {
                let router = self.load_router(kind, &queries)?;
                let rel = format!("routers/{}.calib.json", kind.as_str());
                let threshold: CalibratedThreshold = serde_json::from_str(
                    &std::fs::read_to_string(self.require(&rel, "calibrate")?)?,
                )?;
                Ok(CalibratedRouter { router, threshold })
            })
            .collect()
    }

    pub fn load_pools(&self) -> Result<(Vec<Query>, Vec<Query>)> {
        let normal = load_jsonl(&self.require("pools/normal.jsonl", "calibrate")?)?;
        let complex = load_jsonl(&self.require("pools/complex.jsonl", "calibrate")?)?;
        Ok((normal, complex))
    }

    // ── Stage: attack ──────────────────────────────────────────────────

    fn attack_config(&self, target: ModelChoice, seed: u64) -> AttackConfig {
        AttackConfig {
            target,
            trigger_len: self.cfg.attack.trigger_len,
            iterations: self.cfg.attack.iterations,
            neighbors_per_step: self.cfg.attack.neighbors_per_step,
            topk_candidates: self.cfg.attack.topk_candidates,
            batch_size: self.cfg.attack.whitebox_batch,
            seed,
        }
    }

    /// Optimize the guard trigger sets (50 per method targeting Strong,
    /// split 6:2:2) plus one Weak-target gray-box run per router for the
    /// quality-hijacking measurements.
    pub fn attack(&self) -> Result<()> {
        self.check_upstream("calibrate")?;
        let (queries, _, vocab) = self.load_corpus()?;
        let routers = self.load_calibrated_routers()?;
        let (normal, _) = self.load_pools()?;
        let train_queries: Vec<Query> = normal
            .iter()
            .filter(|q| q.split == Split::Train)
            .cloned()
            .collect();

        std::fs::create_dir_all(self.path("attacks"))?;
        let mut runs: Vec<AttackRunRecord> = Vec::new();
        let mut by_method: BTreeMap<TriggerMethod, Vec<String>> = BTreeMap::new();
        let n = self.cfg.attack.triggers_per_method;
        let differentiable: Vec<&CalibratedRouter> = routers
            .iter()
            .filter(|r| r.router.differentiable().is_some())
            .collect();

        // The guard's trigger corpus is fielded against the routers where
        // gray-box feedback actually reroutes; the retrieval router's
        // gray-box salads stay near-benign word lotteries with no
        // rerouting effect (it is still attacked via transfer in eval).
        for i in 0..n {
            let seed = self.seed("attack:graybox", i as u64);
            let router = differentiable[i % differentiable.len()];
            let cfg = self.attack_config(ModelChoice::Strong, seed);
            let (trigger, trace) = graybox_optimize(&router.router, &vocab, &cfg)?;
            by_method
                .entry(TriggerMethod::GrayBox)
                .or_default()
                .push(trigger.clone());
            runs.push(AttackRunRecord {
                method: TriggerMethod::GrayBox,
                target: ModelChoice::Strong,
                trigger,
                objective_trace: trace.objective,
                seed,
                router: Some(router.router.id().to_string()),
            });
        }
        for i in 0..n {
            let seed = self.seed("attack:whitebox", i as u64);
            let router = differentiable[i % differentiable.len()];
            let dr = router.router.differentiable().unwrap();
            let cfg = self.attack_config(ModelChoice::Strong, seed);
            let (trigger, trace) = whitebox_optimize(dr, &train_queries, &cfg)?;
            by_method
                .entry(TriggerMethod::WhiteBox)
                .or_default()
                .push(trigger.clone());
            runs.push(AttackRunRecord {
                method: TriggerMethod::WhiteBox,
                target: ModelChoice::Strong,
                trigger,
                objective_trace: trace.objective,
                seed,
                router: Some(router.router.id().to_string()),
            });
        }
        let summarizer = LogOddsSummarizer {
            num_phrases: (self.cfg.attack.trigger_len / 3).max(1),
            pool_factor: 3,
        };
        for i in 0..n {
            let seed = self.seed("attack:boxfree", i as u64);
            let trigger = boxfree_optimize(&routers, &queries, &summarizer, ModelChoice::Strong, seed)?;
            by_method
                .entry(TriggerMethod::BoxFree)
                .or_default()
                .push(trigger.clone());
            runs.push(AttackRunRecord {
                method: TriggerMethod::BoxFree,
                target: ModelChoice::Strong,
                trigger,
                objective_trace: Vec::new(),
                seed,
                router: None,
            });
        }
        // Weak-target gray-box triggers, one per router.
        for (i, router) in routers.iter().enumerate() {
            let seed = self.seed("attack:graybox-weak", i as u64);
            let mut cfg = self.attack_config(ModelChoice::Weak, seed);
            if matches!(router.router, AnyRouter::Sw(_)) {
                cfg.iterations = cfg.iterations.min(200);
                cfg.neighbors_per_step = cfg.neighbors_per_step.min(32);
            }
            let (trigger, trace) = graybox_optimize(&router.router, &vocab, &cfg)?;
            runs.push(AttackRunRecord {
                method: TriggerMethod::GrayBox,
                target: ModelChoice::Weak,
                trigger,
                objective_trace: trace.objective,
                seed,
                router: Some(router.router.id().to_string()),
            });
        }

        let triggers = split_triggers(&by_method, self.seed("trigger-split", 0))?;
        save_jsonl(&self.path("attacks/runs.jsonl"), &runs)?;
        save_jsonl(&self.path("attacks/triggers.jsonl"), &triggers)?;
        self.write_manifest(
            "attack",
            &["corpus/queries.jsonl", "pools/normal.jsonl"],
            &["attacks/runs.jsonl", "attacks/triggers.jsonl"],
        )
    }

    pub fn load_triggers(&self) -> Result<Vec<Trigger>> {
        load_jsonl(&self.require("attacks/triggers.jsonl", "attack")?)
    }

    pub fn load_attack_runs(&self) -> Result<Vec<AttackRunRecord>> {
        load_jsonl(&self.require("attacks/runs.jsonl", "attack")?)
    }

    // ── Stage: train-guard ─────────────────────────────────────────────

    pub fn train_guard(&self) -> Result<()> {
        self.check_upstream("attack")?;
        let (normal, _) = self.load_pools()?;
        let triggers = self.load_triggers()?;
        std::fs::create_dir_all(self.path("guard"))?;

        let split_of = |split: Split| -> Vec<Query> {
            normal.iter().filter(|q| q.split == split).cloned().collect()
        };
        let trig_of = |split: Split| -> Vec<Trigger> {
            triggers.iter().filter(|t| t.split == split).cloned().collect()
        };
        let normal_train = split_of(Split::Train);
        let normal_val = split_of(Split::Val);
        let adv_train = build_adversarial_split(
            &normal_train,
            &trig_of(Split::Train),
            self.seed("dadv", 0),
        )?;
        let adv_val =
            build_adversarial_split(&normal_val, &trig_of(Split::Val), self.seed("dadv", 1))?;

        let mut gcfg = self.cfg.guard.clone();
        gcfg.train.seed = self.seed("guard-train", 0);
        let train_pairs = build_pair_dataset(&normal_train, &adv_train, &gcfg, self.seed("pairs", 0))?;
        let val_pairs = build_pair_dataset(&normal_val, &adv_val, &gcfg, self.seed("pairs", 1))?;
        let trained = train_guard(&train_pairs, &val_pairs, &gcfg)?;
        save_checkpoint(&self.path("guard/guard.json"), &trained.model)?;
        std::fs::write(
            self.path("guard/config.json"),
            serde_json::to_string_pretty(&gcfg)?,
        )?;

        let mut sq_cfg = gcfg.clone();
        sq_cfg.train.seed = self.seed("single-query-train", 0);
        let baseline = train_single_query_baseline(
            &normal_train,
            &adv_train,
            &normal_val,
            &adv_val,
            &sq_cfg,
        )?;
        save_checkpoint(&self.path("guard/single_query.json"), &baseline)?;
        self.write_manifest(
            "train-guard",
            &["pools/normal.jsonl", "attacks/triggers.jsonl"],
            &["guard/guard.json", "guard/config.json", "guard/single_query.json"],
        )
    }

    pub fn load_guard(&self) -> Result<(SiameseModel, GuardConfig)> {
        let model: SiameseModel =
            load_checkpoint(&self.require("guard/guard.json", "train-guard")?)?;
        let cfg: GuardConfig = serde_json::from_str(&std::fs::read_to_string(
            self.require("guard/config.json", "train-guard")?,
        )?)?;
        Ok((model, cfg))
    }

    pub fn load_single_query_baseline(&self) -> Result<SingleQueryDetector> {
        load_checkpoint(&self.require("guard/single_query.json", "train-guard")?)
    }

    // ── Stage: eval ────────────────────────────────────────────────────

    pub fn eval(&self) -> Result<()> {
        self.check_upstream("train-guard")?;
        let ctx = EvalContext::load(self)?;
        let (report, decisions) = ctx.run(self)?;
        std::fs::create_dir_all(self.path("eval"))?;
        report.save_jsonl(&self.path("eval/report.jsonl"))?;
        save_jsonl(&self.path("guard/decisions.jsonl"), &decisions)?;
        self.write_manifest(
            "eval",
            &[
                "corpus/queries.jsonl",
                "attacks/triggers.jsonl",
                "guard/guard.json",
            ],
            &[
                "eval/report.jsonl",
                "guard/decisions.jsonl",
                "baselines/lm.json",
                "baselines/ppl_threshold.json",
            ],
        )
    }

    pub fn load_report(&self) -> Result<EvalReport> {
        EvalReport::load_jsonl(&self.require("eval/report.jsonl", "eval")?)
    }

    // ── Stage: report ──────────────────────────────────────────────────

    pub fn report(&self) -> Result<()> {
        self.check_upstream("eval")?;
        let report = self.load_report()?;
        let dir = self.path("report");
        report.emit(&dir)?;
        for group in &report.cdf_groups {
            crate::metrics::write_cdf_points(
                &dir.join(format!("cdf_{}.txt", group.group)),
                &group.points,
            )?;
        }
        if let Some(pca) = &report.pca_points {
            let pca2d = crate::metrics::Pca2d {
                coords: pca.coords.clone(),
                explained: pca.explained,
                components: [Vec::new(), Vec::new()],
            };
            crate::metrics::write_pca_points(&dir.join("pca_points.txt"), &pca.labels, &pca2d)?;
        }
        std::fs::write(self.path("report/summary.txt"), render_summary(&report))?;
        self.write_manifest("report", &["eval/report.jsonl"], &["report/report.jsonl"])
    }

    pub fn run_all(&self) -> Result<()> {
        self.gen_data()?;
        self.train_routers()?;
        self.calibrate()?;
        self.attack()?;
        self.train_guard()?;
        self.eval()?;
        self.report()
    }
}

fn render_summary(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("== routing ==\n");
    for r in &report.routing {
        s.push_str(&format!(
            "{:8} attack={:9} target={:6} score={:6.1} sel={:?} asr={:?} acg={:?}\n",
            r.router,
            r.attack.clone().unwrap_or_else(|| "none".into()),
            r.target,
            r.benchmark_score,
            r.selection_rate,
            r.asr,
            r.acg
        ));
    }
    s.push_str("== detection ==\n");
    for r in &report.detection {
        s.push_str(&format!(
            "{:13} benign={:12} method={:9} acc={:.3} f1={:.3} block_rate={:.4}\n",
            r.defense, r.benign_set, r.method, r.accuracy, r.f1, r.benign_block_rate
        ));
    }
    s.push_str("== mitigation ==\n");
    for r in &report.mitigation {
        s.push_str(&format!(
            "{:8} defense={:13} method={:9} post_asr={:?}\n",
            r.router, r.defense, r.method, r.post_asr
        ));
    }
    s.push_str("== adaptive ==\n");
    for r in &report.adaptive {
        s.push_str(&format!(
            "{:8} method={:9} adaptive={:5} mean_guard_prob={:.4} post_asr={:?}\n",
            r.router, r.method, r.adaptive, r.mean_guard_prob, r.post_asr
        ));
    }
    s.push_str("== patterns ==\n");
    for r in &report.patterns {
        s.push_str(&format!(
            "{:20} mean_ppl={:9.2} mean_chars={:7.1}\n",
            r.group, r.mean_ppl, r.mean_chars
        ));
    }
    s
}

// ── Eval internals ─────────────────────────────────────────────────────

struct EvalContext {
    queries: Vec<Query>,
    vocab: Vocab,
    routers: Vec<CalibratedRouter>,
    normal: Vec<Query>,
    complex: Vec<Query>,
    triggers: Vec<Trigger>,
    runs: Vec<AttackRunRecord>,
    guard: SiameseModel,
    gcfg: GuardConfig,
    baseline: SingleQueryDetector,
}

struct AttackEval {
    method: TriggerMethod,
    trigger_text: String,
    win_before: Vec<f64>,
    win_after: Vec<f64>,
}

impl EvalContext {
    fn load(p: &Pipeline) -> Result<Self> {
        let (queries, _, vocab) = p.load_corpus()?;
        let routers = p.load_calibrated_routers()?;
        let (normal, complex) = p.load_pools()?;
        let triggers = p.load_triggers()?;
        let runs = p.load_attack_runs()?;
        let (guard, gcfg) = p.load_guard()?;
        let baseline = p.load_single_query_baseline()?;
        Ok(EvalContext {
            queries,
            vocab,
            routers,
            normal,
            complex,
            triggers,
            runs,
            guard,
            gcfg,
            baseline,
        })
    }

    fn split_of(&self, split: Split) -> Vec<Query> {
        self.normal
            .iter()
            .filter(|q| q.split == split)
            .cloned()
            .collect()
    }

    fn test_triggers(&self, method: TriggerMethod) -> Vec<Trigger> {
        self.triggers
            .iter()
            .filter(|t| t.method == method && t.split == Split::Test)
            .cloned()
            .collect()
    }

    /// Pick the evaluation trigger for a router and method: the
    /// best-objective run whose trigger landed in the held-out test
    /// split, preferring runs optimized against that router.
    fn eval_trigger(&self, router_id: &str, method: TriggerMethod) -> Option<String> {
        let test: std::collections::HashSet<String> = self
            .test_triggers(method)
            .into_iter()
            .map(|t| t.text)
            .collect();
        let mut best: Option<(f64, &AttackRunRecord)> = None;
        for run in &self.runs {
            if run.method != method
                || run.target != ModelChoice::Strong
                || !test.contains(&run.trigger)
            {
                continue;
            }
            if let Some(rid) = &run.router {
                if rid != router_id {
                    continue;
                }
            }
            let score = run.objective_trace.last().copied().unwrap_or(0.0);
            if best.map_or(true, |(b, _)| score > b) {
                best = Some((score, run));
            }
        }
        match best {
            Some((_, run)) => Some(run.trigger.clone()),
            // Router-agnostic methods or routers with no test-split run
            // of their own fall back to any test trigger.
            None => self
                .test_triggers(method)
                .first()
                .map(|t| t.text.clone()),
        }
    }

    fn win_rates(&self, router: &CalibratedRouter, queries: &[Query]) -> Result<Vec<f64>> {
        map_batch(queries, |q| router.router.win_rate(&q.text))
            .into_iter()
            .map(|r| r.map(|w| w.value()))
            .collect()
    }

    fn win_rates_with_trigger(
        &self,
        router: &CalibratedRouter,
        queries: &[Query],
        trigger: &str,
    ) -> Result<Vec<f64>> {
        map_batch(queries, |q| {
            router.router.win_rate(&format!("{trigger} {}", q.text))
        })
        .into_iter()
        .map(|r| r.map(|w| w.value()))
        .collect()
    }

    fn run(&self, p: &Pipeline) -> Result<(EvalReport, Vec<VoteRecord>)> {
        let mut report = EvalReport::default();
        let mut decisions: Vec<VoteRecord> = Vec::new();

        let normal_test = self.split_of(Split::Test);
        let normal_train = self.split_of(Split::Train);
        if normal_test.is_empty() || normal_train.is_empty() {
            return Err(Error::invalid("normal pool has empty splits"));
        }
        let strong_sim = ModelSimulator::strong(p.seed("simulator", 0));
        let weak_sim = ModelSimulator::weak(p.seed("simulator", 1));

        // Deterministic complex-pool sample matched to the test size.
        let complex_sample: Vec<Query> = {
            let mut order: Vec<usize> = (0..self.complex.len()).collect();
            let mut rng = derive_rng(p.cfg.root_seed, "complex-sample", 0);
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            order
                .into_iter()
                .take(normal_test.len().min(self.complex.len()))
                .map(|i| self.complex[i].clone())
                .collect()
        };

        // ── Language-model baseline artifacts ──
        std::fs::create_dir_all(p.path("baselines"))?;
        let lm = NGramLm::train(
            normal_train.iter().map(|q| q.text.as_str()),
            DEFAULT_ADD_K,
        )?;
        let ppl_threshold = calibrate_ppl_threshold(&lm, &normal_train, &p.corpus_id()?)?;
        lm.save(&p.path("baselines/lm.json"))?;
        std::fs::write(
            p.path("baselines/ppl_threshold.json"),
            serde_json::to_string_pretty(&ppl_threshold)?,
        )?;

        // ── Routing rows: clean baseline per router ──
        for router in &self.routers {
            let corpus_rates = self.win_rates(router, &self.queries)?;
            let clean_test_rates = self.win_rates(router, &normal_test)?;
            let choices: Vec<ModelChoice> = clean_test_rates
                .iter()
                .map(|&w| {
                    if w >= router.threshold.alpha {
                        ModelChoice::Strong
                    } else {
                        ModelChoice::Weak
                    }
                })
                .collect();
            report.routing.push(RoutingRow {
                router: router.router.id().to_string(),
                attack: None,
                target: "strong".into(),
                benchmark_score: benchmark_score(&normal_test, &choices, &strong_sim, &weak_sim)?,
                selection_rate: selection_rate(
                    &corpus_rates,
                    router.threshold.alpha,
                    ModelChoice::Strong,
                ),
                asr: None,
                acg: None,
            });
        }

        // ── Cost-escalation attack rows + detection + mitigation ──
        let mut attack_evals: BTreeMap<(String, TriggerMethod), AttackEval> = BTreeMap::new();
        for router in &self.routers {
            let rid = router.router.id().to_string();
            let win_before = self.win_rates(router, &normal_test)?;
            for method in TriggerMethod::ALL {
                if method == TriggerMethod::WhiteBox
                    && router.router.differentiable().is_none()
                {
                    continue;
                }
                let Some(trigger) = self.eval_trigger(&rid, method) else {
                    continue;
                };
                let win_after = self.win_rates_with_trigger(router, &normal_test, &trigger)?;
                let choices: Vec<ModelChoice> = win_after
                    .iter()
                    .map(|&w| {
                        if w >= router.threshold.alpha {
                            ModelChoice::Strong
                        } else {
                            ModelChoice::Weak
                        }
                    })
                    .collect();
                report.routing.push(RoutingRow {
                    router: rid.clone(),
                    attack: Some(method.as_str().to_string()),
                    target: "strong".into(),
                    benchmark_score: benchmark_score(
                        &normal_test,
                        &choices,
                        &strong_sim,
                        &weak_sim,
                    )?,
                    selection_rate: selection_rate(
                        &win_after,
                        router.threshold.alpha,
                        ModelChoice::Strong,
                    ),
                    asr: asr(
                        &win_before,
                        &win_after,
                        router.threshold.alpha,
                        ModelChoice::Strong,
                    )?,
                    acg: Some(acg(&win_before, &win_after)?),
                });
                attack_evals.insert(
                    (rid.clone(), method),
                    AttackEval {
                        method,
                        trigger_text: trigger,
                        win_before: win_before.clone(),
                        win_after,
                    },
                );
            }
        }

        // ── Quality hijacking (Weak target) on the complex sample ──
        for router in &self.routers {
            let rid = router.router.id().to_string();
            let run = self
                .runs
                .iter()
                .find(|r| {
                    r.method == TriggerMethod::GrayBox
                        && r.target == ModelChoice::Weak
                        && r.router.as_deref() == Some(rid.as_str())
                })
                .ok_or_else(|| Error::MissingArtifact {
                    path: "attacks/runs.jsonl (weak-target runs)".into(),
                    stage: "attack".into(),
                })?;
            let win_before = self.win_rates(router, &complex_sample)?;
            let win_after =
                self.win_rates_with_trigger(router, &complex_sample, &run.trigger)?;
            report.routing.push(RoutingRow {
                router: rid,
                attack: Some("graybox".into()),
                target: "weak".into(),
                benchmark_score: benchmark_score(
                    &complex_sample,
                    &win_after
                        .iter()
                        .map(|&w| {
                            if w >= router.threshold.alpha {
                                ModelChoice::Strong
                            } else {
                                ModelChoice::Weak
                            }
                        })
                        .collect::<Vec<_>>(),
                    &strong_sim,
                    &weak_sim,
                )?,
                selection_rate: selection_rate(
                    &win_after,
                    router.threshold.alpha,
                    ModelChoice::Weak,
                ),
                asr: asr(
                    &win_before,
                    &win_after,
                    router.threshold.alpha,
                    ModelChoice::Weak,
                )?,
                acg: Some(acg(&win_before, &win_after)?),
            });
        }

        // ── Detection: balanced benign/adversarial per method ──
        let deploy_seed = p.seed("deploy", 0);
        let k = self.gcfg.k_references;
        let mut adv_test_by_method: BTreeMap<TriggerMethod, Vec<Query>> = BTreeMap::new();
        for method in TriggerMethod::ALL {
            let trigs = self.test_triggers(method);
            if trigs.is_empty() {
                return Err(Error::MissingArtifact {
                    path: format!("attacks/triggers.jsonl ({} test split)", method.as_str()),
                    stage: "attack".into(),
                });
            }
            let adv = build_adversarial_split(
                &normal_test,
                &trigs,
                p.seed(&format!("eval-adv:{}", method.as_str()), 0),
            )?;
            adv_test_by_method.insert(method, adv);
        }

        let guard_predict = |q: &Query, decisions: &mut Vec<VoteRecord>| -> Result<bool> {
            let (d, record) = deploy_vote(&self.guard, q, &normal_train, k, deploy_seed)?;
            decisions.push(record);
            Ok(d == GateDecision::Block)
        };

        for (&method, adv) in &adv_test_by_method {
            // Siamese guard on normal-test benign.
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            let mut benign_blocks = 0usize;
            for q in &normal_test {
                let blocked = guard_predict(q, &mut decisions)?;
                benign_blocks += blocked as usize;
                preds.push(blocked);
                labels.push(false);
            }
            for q in adv {
                preds.push(guard_predict(q, &mut decisions)?);
                labels.push(true);
            }
            let m = detection_metrics(&preds, &labels)?;
            report.detection.push(DetectionRow {
                defense: "guard".into(),
                benign_set: "normal_test".into(),
                method: method.as_str().into(),
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                benign_block_rate: benign_blocks as f64 / normal_test.len() as f64,
            });

            // Guard utility on the complex-pool benign sample.
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            let mut benign_blocks = 0usize;
            for q in &complex_sample {
                let blocked = guard_predict(q, &mut decisions)?;
                benign_blocks += blocked as usize;
                preds.push(blocked);
                labels.push(false);
            }
            for q in adv.iter().take(complex_sample.len()) {
                preds.push(guard_predict(q, &mut decisions)?);
                labels.push(true);
            }
            let m = detection_metrics(&preds, &labels)?;
            report.detection.push(DetectionRow {
                defense: "guard".into(),
                benign_set: "complex_pool".into(),
                method: method.as_str().into(),
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                benign_block_rate: benign_blocks as f64 / complex_sample.len() as f64,
            });

            // Single-query ablation baseline on both benign sets.
            for (benign_set, benign) in
                [("normal_test", &normal_test), ("complex_pool", &complex_sample)]
            {
                let mut preds = Vec::new();
                let mut labels = Vec::new();
                let mut benign_blocks = 0usize;
                for q in benign.iter() {
                    let blocked = self.baseline.predict_prob(&q.text)? > 0.5;
                    benign_blocks += blocked as usize;
                    preds.push(blocked);
                    labels.push(false);
                }
                for q in adv.iter().take(benign.len()) {
                    preds.push(self.baseline.predict_prob(&q.text)? > 0.5);
                    labels.push(true);
                }
                let m = detection_metrics(&preds, &labels)?;
                report.detection.push(DetectionRow {
                    defense: "single_query".into(),
                    benign_set: benign_set.into(),
                    method: method.as_str().into(),
                    accuracy: m.accuracy,
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                    benign_block_rate: benign_blocks as f64 / benign.len() as f64,
                });
            }

            // Perplexity filter as a detector.
            let mut preds = Vec::new();
            let mut labels = Vec::new();
            let mut benign_blocks = 0usize;
            for q in &normal_test {
                let blocked = perplexity(&lm, &q.text)? > ppl_threshold.value;
                benign_blocks += blocked as usize;
                preds.push(blocked);
                labels.push(false);
            }
            for q in adv {
                preds.push(perplexity(&lm, &q.text)? > ppl_threshold.value);
                labels.push(true);
            }
            let m = detection_metrics(&preds, &labels)?;
            report.detection.push(DetectionRow {
                defense: "ppl".into(),
                benign_set: "normal_test".into(),
                method: method.as_str().into(),
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                benign_block_rate: benign_blocks as f64 / normal_test.len() as f64,
            });

            // All-positive reference signature on the balanced set.
            let n_bal = normal_test.len() + adv.len();
            let preds = vec![true; n_bal];
            let labels: Vec<bool> = (0..n_bal).map(|i| i >= normal_test.len()).collect();
            let m = detection_metrics(&preds, &labels)?;
            report.detection.push(DetectionRow {
                defense: "all_positive".into(),
                benign_set: "normal_test".into(),
                method: method.as_str().into(),
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                benign_block_rate: 1.0,
            });
        }

        // Perplexity block rate on its own calibration set is zero by
        // construction; record it explicitly.
        {
            let blocked = normal_train
                .iter()
                .map(|q| Ok((perplexity(&lm, &q.text)? > ppl_threshold.value) as usize))
                .collect::<Result<Vec<usize>>>()?
                .iter()
                .sum::<usize>();
            report.detection.push(DetectionRow {
                defense: "ppl".into(),
                benign_set: "calibration".into(),
                method: "none".into(),
                accuracy: 1.0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                benign_block_rate: blocked as f64 / normal_train.len() as f64,
            });
        }

        // ── Mitigation: post-filter ASR per router x method ──
        for router in &self.routers {
            let rid = router.router.id().to_string();
            for method in TriggerMethod::ALL {
                let Some(eval) = attack_evals.get(&(rid.clone(), method)) else {
                    continue;
                };
                let adv_queries: Vec<Query> = normal_test
                    .iter()
                    .map(|q| Query {
                        id: q.id.clone(),
                        text: format!("{} {}", eval.trigger_text, q.text),
                        complexity: q.complexity,
                        origin: format!("adv:{}", eval.method.as_str()),
                        split: q.split,
                    })
                    .collect();

                // Guard gate.
                let mut eligible = 0usize;
                let mut succeeded = 0usize;
                for (i, q) in adv_queries.iter().enumerate() {
                    if eval.win_before[i] >= router.threshold.alpha {
                        continue;
                    }
                    eligible += 1;
                    let (decision, record) =
                        deploy_vote(&self.guard, q, &normal_train, k, deploy_seed)?;
                    decisions.push(record);
                    if decision == GateDecision::Forward
                        && eval.win_after[i] >= router.threshold.alpha
                    {
                        succeeded += 1;
                    }
                }
                report.mitigation.push(MitigationRow {
                    router: rid.clone(),
                    defense: "guard".into(),
                    method: method.as_str().into(),
                    post_asr: (eligible > 0).then(|| succeeded as f64 / eligible as f64),
                });

                // Perplexity gate.
                let mut eligible = 0usize;
                let mut succeeded = 0usize;
                for (i, q) in adv_queries.iter().enumerate() {
                    if eval.win_before[i] >= router.threshold.alpha {
                        continue;
                    }
                    eligible += 1;
                    let forwarded = perplexity(&lm, &q.text)? <= ppl_threshold.value;
                    if forwarded && eval.win_after[i] >= router.threshold.alpha {
                        succeeded += 1;
                    }
                }
                report.mitigation.push(MitigationRow {
                    router: rid.clone(),
                    defense: "ppl".into(),
                    method: method.as_str().into(),
                    post_asr: (eligible > 0).then(|| succeeded as f64 / eligible as f64),
                });
            }
        }

        // Multi-router vote defense: the flip is measured on the joint
        // decision instead of a single router's.
        for method in TriggerMethod::ALL {
            let Some(trigger) = self.eval_trigger("r_cls", method) else {
                continue;
            };
            let before: Result<Vec<ModelChoice>> = normal_test
                .iter()
                .map(|q| multi_router_route(&self.routers, &q.text).map(|d| d.model))
                .collect();
            let after: Result<Vec<ModelChoice>> = normal_test
                .iter()
                .map(|q| {
                    multi_router_route(&self.routers, &format!("{trigger} {}", q.text))
                        .map(|d| d.model)
                })
                .collect();
            let before = before?;
            let after = after?;
            let mut eligible = 0usize;
            let mut flipped = 0usize;
            for (b, a) in before.iter().zip(after.iter()) {
                if *b == ModelChoice::Weak {
                    eligible += 1;
                    if *a == ModelChoice::Strong {
                        flipped += 1;
                    }
                }
            }
            report.mitigation.push(MitigationRow {
                router: "vote".into(),
                defense: "multi_router".into(),
                method: method.as_str().into(),
                post_asr: (eligible > 0).then(|| flipped as f64 / eligible as f64),
            });
        }

        // ── Adaptive attacks ──
        let ref_pool = &normal_train;
        for router in &self.routers {
            let rid = router.router.id().to_string();
            let mut plain_probs = Vec::new();
            let mut adaptive_probs = Vec::new();
            let mut adaptive_post_asr = Vec::new();
            for s in 0..p.cfg.eval.adaptive_seeds {
                let seed = p.seed(&format!("adaptive:{rid}"), s as u64);
                let mut refs = Vec::new();
                let mut rng = derive_rng(seed, "adaptive-refs", 0);
                for _ in 0..k {
                    let q = &ref_pool[rng.gen_range(0..ref_pool.len())];
                    refs.push(self.guard.encode(&q.text)?);
                }
                let cfg = AttackConfig {
                    iterations: p.cfg.eval.adaptive_iterations,
                    ..p.attack_config(ModelChoice::Strong, seed)
                };
                let (plain_trigger, _) = graybox_optimize(&router.router, &self.vocab, &cfg)?;
                let (adaptive_trigger, _) = adaptive_graybox(
                    &router.router,
                    &self.vocab,
                    &self.guard,
                    &refs,
                    p.cfg.eval.adaptive_penalty,
                    &cfg,
                )?;
                plain_probs.push(self.guard.guard_prob(&plain_trigger, &refs)?);
                adaptive_probs.push(self.guard.guard_prob(&adaptive_trigger, &refs)?);

                // Post-guard ASR of the adaptive trigger.
                let win_before = self.win_rates(router, &normal_test)?;
                let win_after =
                    self.win_rates_with_trigger(router, &normal_test, &adaptive_trigger)?;
                let mut eligible = 0usize;
                let mut succeeded = 0usize;
                for (i, q) in normal_test.iter().enumerate() {
                    if win_before[i] >= router.threshold.alpha {
                        continue;
                    }
                    eligible += 1;
                    let adv_q = Query {
                        id: q.id.clone(),
                        text: format!("{adaptive_trigger} {}", q.text),
                        complexity: q.complexity,
                        origin: "adv:graybox".into(),
                        split: q.split,
                    };
                    let (decision, record) =
                        deploy_vote(&self.guard, &adv_q, &normal_train, k, deploy_seed)?;
                    decisions.push(record);
                    if decision == GateDecision::Forward
                        && win_after[i] >= router.threshold.alpha
                    {
                        succeeded += 1;
                    }
                }
                adaptive_post_asr
                    .push((eligible > 0).then(|| succeeded as f64 / eligible as f64));
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            report.adaptive.push(AdaptiveRow {
                router: rid.clone(),
                method: "graybox".into(),
                adaptive: false,
                mean_guard_prob: mean(&plain_probs),
                post_asr: None,
                seeds: p.cfg.eval.adaptive_seeds,
            });
            let post: Vec<f64> = adaptive_post_asr.iter().flatten().copied().collect();
            report.adaptive.push(AdaptiveRow {
                router: rid,
                method: "graybox".into(),
                adaptive: true,
                mean_guard_prob: mean(&adaptive_probs),
                post_asr: (!post.is_empty()).then(|| mean(&post)),
                seeds: p.cfg.eval.adaptive_seeds,
            });
        }

        // Adaptive white-box: recorded for the differentiable routers.
        for router in &self.routers {
            let Some(dr) = router.router.differentiable() else {
                continue;
            };
            let rid = router.router.id().to_string();
            let seed = p.seed(&format!("adaptive-wb:{rid}"), 0);
            let mut refs = Vec::new();
            let mut rng = derive_rng(seed, "adaptive-refs", 0);
            for _ in 0..k {
                let q = &ref_pool[rng.gen_range(0..ref_pool.len())];
                refs.push(self.guard.encode(&q.text)?);
            }
            let adaptive_guard = AdaptiveGuard {
                model: &self.guard,
                reference_embeddings: &refs,
                beta: p.cfg.eval.adaptive_beta,
                epsilon: p.cfg.eval.adaptive_epsilon,
            };
            let cfg = AttackConfig {
                batch_size: p.cfg.eval.adaptive_whitebox_batch,
                iterations: p.cfg.eval.adaptive_iterations,
                ..p.attack_config(ModelChoice::Strong, seed)
            };
            let (trigger, _) = adaptive_whitebox(
                dr,
                &normal_train,
                &adaptive_guard,
                p.cfg.eval.adaptive_alpha,
                &cfg,
            )?;
            let win_before = self.win_rates(router, &normal_test)?;
            let win_after = self.win_rates_with_trigger(router, &normal_test, &trigger)?;
            let mut eligible = 0usize;
            let mut succeeded = 0usize;
            for (i, q) in normal_test.iter().enumerate() {
                if win_before[i] >= router.threshold.alpha {
                    continue;
                }
                eligible += 1;
                let adv_q = Query {
                    id: q.id.clone(),
                    text: format!("{trigger} {}", q.text),
                    complexity: q.complexity,
                    origin: "adv:whitebox".into(),
                    split: q.split,
                };
                let (decision, record) =
                    deploy_vote(&self.guard, &adv_q, &normal_train, k, deploy_seed)?;
                decisions.push(record);
                if decision == GateDecision::Forward && win_after[i] >= router.threshold.alpha {
                    succeeded += 1;
                }
            }
            report.adaptive.push(AdaptiveRow {
                router: rid,
                method: "whitebox".into(),
                adaptive: true,
                mean_guard_prob: self.guard.guard_prob(&trigger, &refs)?,
                post_asr: (eligible > 0).then(|| succeeded as f64 / eligible as f64),
                seeds: 1,
            });
        }

        // ── Trigger-pattern statistics ──
        let mut groups: Vec<(String, Vec<String>)> = vec![(
            "normal".into(),
            normal_test.iter().map(|q| q.text.clone()).collect(),
        )];
        for (&method, adv) in &adv_test_by_method {
            groups.push((
                method.as_str().to_string(),
                adv.iter().map(|q| q.text.clone()).collect(),
            ));
        }
        report.patterns = trigger_pattern_stats(&groups, &lm)?;

        // ── Transferability CDF: ASR of every test trigger on every
        // router, grouped by method ──
        for method in TriggerMethod::ALL {
            let mut values = Vec::new();
            for trig in self.test_triggers(method) {
                for router in &self.routers {
                    let win_before = self.win_rates(router, &normal_test)?;
                    let win_after =
                        self.win_rates_with_trigger(router, &normal_test, &trig.text)?;
                    if let Some(v) = asr(
                        &win_before,
                        &win_after,
                        router.threshold.alpha,
                        ModelChoice::Strong,
                    )? {
                        values.push(v);
                    }
                }
            }
            if !values.is_empty() {
                report.cdf_groups.push(CdfGroup {
                    group: method.as_str().to_string(),
                    points: asr_cdf(&values),
                });
            }
        }

        // ── Representation PCA over hashed embeddings ──
        let mut labels = Vec::new();
        let mut points = Vec::new();
        let take = 60usize;
        for q in normal_test.iter().take(take) {
            labels.push("normal_simple".to_string());
            points.push(embed_hashed(&q.text, self.gcfg.hash_dim));
        }
        for q in complex_sample.iter().take(take) {
            labels.push("normal_complex".to_string());
            points.push(embed_hashed(&q.text, self.gcfg.hash_dim));
        }
        for (&method, adv) in &adv_test_by_method {
            for q in adv.iter().take(take) {
                labels.push(format!("adv_{}", method.as_str()));
                points.push(embed_hashed(&q.text, self.gcfg.hash_dim));
            }
        }
        if points.len() >= 3 {
            let pca = pca_2d(&points)?;
            report.pca_points = Some(PcaPoints {
                labels,
                coords: pca.coords,
                explained: pca.explained,
            });
        }

        Ok((report, decisions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg = PipelineConfig::default();
        let a = Pipeline::new(cfg.clone(), "/tmp/a").unwrap();
        let b = Pipeline::new(cfg, "/tmp/b").unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let mut cfg2 = PipelineConfig::default();
        cfg2.root_seed = 43;
        let c = Pipeline::new(cfg2, "/tmp/c").unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn missing_artifacts_name_the_producing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), dir.path()).unwrap();
        let err = p.load_corpus().unwrap_err();
        match err {
            Error::MissingArtifact { stage, .. } => assert_eq!(stage, "gen-data"),
            other => panic!("unexpected error {other}"),
        }
        let err = p.train_routers().unwrap_err();
        match err {
            Error::MissingArtifact { stage, .. } => assert_eq!(stage, "gen-data"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn stale_config_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.corpus.n_simple = 30;
        cfg.corpus.n_complex = 30;
        let p = Pipeline::new(cfg.clone(), dir.path()).unwrap();
        p.gen_data().unwrap();
        cfg.root_seed = 99;
        let p2 = Pipeline::new(cfg, dir.path()).unwrap();
        let err = p2.check_upstream("gen-data").unwrap_err();
        assert!(matches!(err, Error::StaleArtifact { .. }));
    }

    #[test]
    fn gen_data_roundtrip_verifies_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.corpus.n_simple = 25;
        cfg.corpus.n_complex = 25;
        let p = Pipeline::new(cfg, dir.path()).unwrap();
        p.gen_data().unwrap();
        let (queries, prefs, vocab) = p.load_corpus().unwrap();
        assert_eq!(queries.len(), 50);
        assert_eq!(prefs.len(), 50);
        assert!(vocab.len() > 10);
        // Byte-identical regeneration.
        let h1 = file_hash(&p.path("corpus/queries.jsonl")).unwrap();
        p.gen_data().unwrap();
        let h2 = file_hash(&p.path("corpus/queries.jsonl")).unwrap();
        assert_eq!(h1, h2);
    }
}
