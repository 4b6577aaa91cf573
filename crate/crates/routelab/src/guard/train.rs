//! Detector training: composite BCE + warmup-ramped contrastive loss,
//! AdamW with backbone/head groups and global-norm clipping, early
//! stopping on validation F1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Query;
use crate::embed::embed_hashed;
use crate::error::{Error, Result};
use crate::metrics::detection_metrics;
use crate::nn::{
    bce_with_logit, clip_scale, global_grad_norm, sigmoid, Activation, AdamW, DenseNet, Group,
    NetGrads,
};
use crate::seeding::{derive_rng, derive_seed};

use super::losses::{contrastive_ramp, supcon_loss_grad, PairWeights};
use super::model::SiameseModel;
use super::pairs::QueryPair;
use super::{is_adversarial, GuardConfig};

pub struct TrainedGuard {
    pub model: SiameseModel,
    pub best_val_f1: f64,
    pub epochs_run: usize,
}

struct PairTensors {
    hashed_a: Vec<f64>,
    hashed_b: Vec<f64>,
    class_a: u8,
    class_b: u8,
    y: f64,
}

fn prepare(pairs: &[QueryPair], hash_dim: usize) -> Vec<PairTensors> {
    pairs
        .iter()
        .map(|p| PairTensors {
            hashed_a: embed_hashed(&p.a.text, hash_dim),
            hashed_b: embed_hashed(&p.b.text, hash_dim),
            class_a: is_adversarial(&p.a) as u8,
            class_b: is_adversarial(&p.b) as u8,
            y: p.y as f64,
        })
        .collect()
}

/// Validation composite loss (full contrastive weight, uniform pair
/// weights), used to keep refining after validation F1 saturates.
fn validation_loss(model: &SiameseModel, tensors: &[PairTensors], cfg: &GuardConfig) -> Result<f64> {
    let mut bce_sum = 0.0;
    let mut embeddings = Vec::with_capacity(2 * tensors.len());
    let mut classes = Vec::with_capacity(2 * tensors.len());
    for t in tensors {
        let ca = model.encode_cached(&t.hashed_a)?;
        let cb = model.encode_cached(&t.hashed_b)?;
        let (logit, _) = model.classify_pair_cached(&ca.embedding, &cb.embedding)?;
        let (_, loss, _) = bce_with_logit(logit, t.y);
        bce_sum += loss;
        embeddings.push(ca.embedding);
        embeddings.push(cb.embedding);
        classes.push(t.class_a);
        classes.push(t.class_b);
    }
    let sup = supcon_loss_grad(
        &embeddings,
        &classes,
        cfg.temperature,
        &PairWeights::uniform(embeddings.len()),
    )?;
    Ok(cfg.lambda_bce * bce_sum / tensors.len() as f64 + cfg.lambda_contr * sup.loss)
}

/// Pair-level F1 with the negative (adversarial-vs-normal) class as the
/// detection target.
pub fn evaluate_pair_f1(model: &SiameseModel, pairs: &[QueryPair]) -> Result<f64> {
    let mut preds = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    for p in pairs {
        let e_a = model.encode(&p.a.text)?;
        let e_b = model.encode(&p.b.text)?;
        preds.push(model.classify_pair(&e_a, &e_b)? > 0.5);
        labels.push(p.y == 1);
    }
    Ok(detection_metrics(&preds, &labels)?.f1)
}

/// Accumulate one batch's gradients and return `(bce, supcon)` losses.
#[allow(clippy::too_many_arguments)]
fn batch_step(
    model: &SiameseModel,
    batch: &[&PairTensors],
    cfg: &GuardConfig,
    step: usize,
    enc_grads: &mut NetGrads,
    proj_grads: &mut NetGrads,
    clf_grads: &mut NetGrads,
) -> Result<(f64, f64)> {
    let b = batch.len();
    let mut caches = Vec::with_capacity(b);
    let mut probs = Vec::with_capacity(b);
    let mut clf_caches = Vec::with_capacity(b);
    for t in batch {
        let ca = model.encode_cached(&t.hashed_a)?;
        let cb = model.encode_cached(&t.hashed_b)?;
        let (logit, clf_cache) = model.classify_pair_cached(&ca.embedding, &cb.embedding)?;
        probs.push(sigmoid(logit));
        clf_caches.push(clf_cache);
        caches.push((ca, cb));
    }

    // Hard negatives: negative pairs the classifier currently calls
    // positive, measured on this batch's forward pass.
    let mut weights = PairWeights::uniform(2 * b);
    for (i, t) in batch.iter().enumerate() {
        if t.y == 1.0 && probs[i] <= 0.5 {
            weights.set(2 * i, 2 * i + 1, cfg.hard_negative_weight);
        }
    }

    let embeddings: Vec<Vec<f64>> = caches
        .iter()
        .flat_map(|(ca, cb)| [ca.embedding.clone(), cb.embedding.clone()])
        .collect();
    let classes: Vec<u8> = batch
        .iter()
        .flat_map(|t| [t.class_a, t.class_b])
        .collect();
    let supcon = supcon_loss_grad(&embeddings, &classes, cfg.temperature, &weights)?;

    let ramp = contrastive_ramp(step, cfg.train.warmup_steps);
    let contr_scale = cfg.lambda_contr * ramp;
    let mut bce_sum = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let (ca, cb) = &caches[i];
        let (_, loss, dlogit) = bce_with_logit(
            // recover the logit from the cached classifier output
            clf_caches[i].inputs.last().unwrap()[0],
            t.y,
        );
        bce_sum += loss;
        let scaled = cfg.lambda_bce * dlogit / b as f64;
        let g_feat = model.clf.backward(&clf_caches[i], &[scaled], clf_grads)?;
        let (mut g_ea, mut g_eb) =
            SiameseModel::pair_features_backward(&ca.embedding, &cb.embedding, &g_feat);
        for d in 0..g_ea.len() {
            g_ea[d] += contr_scale * supcon.grads[2 * i][d];
            g_eb[d] += contr_scale * supcon.grads[2 * i + 1][d];
        }
        for (cache, g_e) in [(ca, g_ea), (cb, g_eb)] {
            let g_pre =
                crate::nn::l2_normalize_backward(&cache.embedding, cache.norm, &g_e);
            let g_h = model.proj.backward(&cache.proj, &g_pre, proj_grads)?;
            model.encoder.backward(&cache.enc, &g_h, enc_grads)?;
        }
    }
    let bce = bce_sum / b as f64;
    if !bce.is_finite() || !supcon.loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "guard loss diverged at step {step}: bce={bce} supcon={}",
            supcon.loss
        )));
    }
    Ok((bce, supcon.loss))
}

fn apply_grads(
    model: &mut SiameseModel,
    opt: &mut AdamW,
    cfg: &GuardConfig,
    enc_grads: &NetGrads,
    proj_grads: &NetGrads,
    clf_grads: &NetGrads,
) -> Result<()> {
    let all: Vec<&[f64]> = enc_grads
        .w
        .iter()
        .chain(enc_grads.b.iter())
        .chain(proj_grads.w.iter())
        .chain(proj_grads.b.iter())
        .chain(clf_grads.w.iter())
        .chain(clf_grads.b.iter())
        .map(|v| v.as_slice())
        .collect();
    let scale = clip_scale(global_grad_norm(all), cfg.train.clip_norm);
    let backbone = cfg.train.group(Group::Backbone);
    let head = cfg.train.group(Group::Head);
    opt.begin_step();
    let mut slot = 0;
    for (l, layer) in model.encoder.layers.iter_mut().enumerate() {
        opt.apply(slot, &mut layer.w, &enc_grads.w[l], backbone, scale)?;
        opt.apply(slot + 1, &mut layer.b, &enc_grads.b[l], backbone, scale)?;
        slot += 2;
    }
    for (l, layer) in model.proj.layers.iter_mut().enumerate() {
        opt.apply(slot, &mut layer.w, &proj_grads.w[l], head, scale)?;
        opt.apply(slot + 1, &mut layer.b, &proj_grads.b[l], head, scale)?;
        slot += 2;
    }
    for (l, layer) in model.clf.layers.iter_mut().enumerate() {
        opt.apply(slot, &mut layer.w, &clf_grads.w[l], head, scale)?;
        opt.apply(slot + 1, &mut layer.b, &clf_grads.b[l], head, scale)?;
        slot += 2;
    }
    Ok(())
}

/// Train the siamese detector; early-stops on validation pair F1 and
/// returns the best checkpoint.
pub fn train_guard(
    train_pairs: &[QueryPair],
    val_pairs: &[QueryPair],
    cfg: &GuardConfig,
) -> Result<TrainedGuard> {
    cfg.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::EmptyInput("guard training pairs".into()));
    }
    let tensors = prepare(train_pairs, cfg.hash_dim);
    let val_tensors = prepare(val_pairs, cfg.hash_dim);
    let mut model = SiameseModel::init(cfg, derive_seed(cfg.train.seed, "guard-init", 0));
    let n_slots = 2 * (model.encoder.layers.len() + model.proj.layers.len() + model.clf.layers.len());
    let mut opt = AdamW::new(n_slots);

    let mut best = model.clone();
    let mut best_f1 = evaluate_pair_f1(&model, val_pairs)?;
    let mut best_loss = validation_loss(&model, &val_tensors, cfg)?;
    let mut stale_epochs = 0;
    let mut step = 0usize;
    let mut epochs_run = 0;

    for epoch in 0..cfg.train.max_epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..tensors.len()).collect();
        let mut rng = derive_rng(cfg.train.seed, "guard-epoch", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<&PairTensors> = chunk.iter().map(|&i| &tensors[i]).collect();
            let mut enc_grads = NetGrads::zeros_like(&model.encoder);
            let mut proj_grads = NetGrads::zeros_like(&model.proj);
            let mut clf_grads = NetGrads::zeros_like(&model.clf);
            batch_step(
                &model,
                &batch,
                cfg,
                step,
                &mut enc_grads,
                &mut proj_grads,
                &mut clf_grads,
            )?;
            apply_grads(&mut model, &mut opt, cfg, &enc_grads, &proj_grads, &clf_grads)?;
            step += 1;
        }
        let f1 = evaluate_pair_f1(&model, val_pairs)?;
        let loss = validation_loss(&model, &val_tensors, cfg)?;
        if std::env::var("ROUTELAB_DEBUG_TRAIN").is_ok() {
            eprintln!("guard epoch {epoch} val_f1 {f1:.4} val_loss {loss:.4}");
        }
        // F1 decides; at equal F1 a lower composite loss still counts as
        // progress so the contrastive geometry keeps refining.
        let improved = f1 > best_f1 + 1e-9 || (f1 >= best_f1 - 1e-9 && loss < best_loss - 1e-6);
        if improved {
            best_f1 = best_f1.max(f1);
            best_loss = loss;
            best = model.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainedGuard {
        model: best,
        best_val_f1: best_f1,
        epochs_run,
    })
}

// ── Single-query ablation baseline ─────────────────────────────────────

/// Direct binary classifier over single queries: the same encoder stack
/// with a sigmoid head, trained with BCE only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingleQueryDetector {
    pub encoder: DenseNet,
    pub proj: DenseNet,
    pub head: DenseNet,
    pub hash_dim: usize,
}

impl SingleQueryDetector {
    pub fn predict_prob(&self, text: &str) -> Result<f64> {
        let hashed = embed_hashed(text, self.hash_dim);
        let (h, _) = self.encoder.forward(&hashed)?;
        let (z, _) = self.proj.forward(&h)?;
        let norm = crate::embed::l2_norm(&z).max(1e-12);
        let e: Vec<f64> = z.iter().map(|x| x / norm).collect();
        let (logit, _) = self.head.forward(&e)?;
        Ok(sigmoid(logit[0]))
    }
}

fn single_query_f1(
    det: &SingleQueryDetector,
    benign: &[Query],
    adversarial: &[Query],
) -> Result<f64> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for q in benign {
        preds.push(det.predict_prob(&q.text)? > 0.5);
        labels.push(false);
    }
    for q in adversarial {
        preds.push(det.predict_prob(&q.text)? > 0.5);
        labels.push(true);
    }
    Ok(detection_metrics(&preds, &labels)?.f1)
}

/// Train the ablation baseline on labeled single queries.
pub fn train_single_query_baseline(
    normal_train: &[Query],
    adv_train: &[Query],
    normal_val: &[Query],
    adv_val: &[Query],
    cfg: &GuardConfig,
) -> Result<SingleQueryDetector> {
    cfg.validate()?;
    if normal_train.is_empty() || adv_train.is_empty() {
        return Err(Error::EmptyInput("single-query training data".into()));
    }
    let seed = derive_seed(cfg.train.seed, "single-query-init", 0);
    let encoder = DenseNet::init(
        &[
            (cfg.hash_dim, cfg.encoder_hidden, Activation::Relu, Group::Backbone),
            (cfg.encoder_hidden, cfg.encoder_out, Activation::Relu, Group::Backbone),
        ],
        derive_seed(seed, "sq-encoder", 0),
    );
    let proj = DenseNet::init(
        &[(cfg.encoder_out, cfg.embed_dim, Activation::Identity, Group::Head)],
        derive_seed(seed, "sq-proj", 0),
    );
    let head = DenseNet::init(
        &[(cfg.embed_dim, 1, Activation::Identity, Group::Head)],
        derive_seed(seed, "sq-head", 0),
    );
    let mut det = SingleQueryDetector {
        encoder,
        proj,
        head,
        hash_dim: cfg.hash_dim,
    };

    let examples: Vec<(Vec<f64>, f64)> = normal_train
        .iter()
        .map(|q| (embed_hashed(&q.text, cfg.hash_dim), 0.0))
        .chain(
            adv_train
                .iter()
                .map(|q| (embed_hashed(&q.text, cfg.hash_dim), 1.0)),
        )
        .collect();
    let n_slots = 2 * (det.encoder.layers.len() + det.proj.layers.len() + det.head.layers.len());
    let mut opt = AdamW::new(n_slots);
    let mut best = det.clone();
    let mut best_f1 = single_query_f1(&det, normal_val, adv_val)?;
    let mut stale = 0;

    for epoch in 0..cfg.train.max_epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = derive_rng(cfg.train.seed, "single-query-epoch", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.train.batch_size) {
            let mut enc_grads = NetGrads::zeros_like(&det.encoder);
            let mut proj_grads = NetGrads::zeros_like(&det.proj);
            let mut head_grads = NetGrads::zeros_like(&det.head);
            for &i in chunk {
                let (hashed, y) = &examples[i];
                let (h, enc_cache) = det.encoder.forward(hashed)?;
                let (z, proj_cache) = det.proj.forward(&h)?;
                let norm = crate::embed::l2_norm(&z).max(1e-12);
                let e: Vec<f64> = z.iter().map(|x| x / norm).collect();
                let (logit, head_cache) = det.head.forward(&e)?;
                let (_, _, dlogit) = bce_with_logit(logit[0], *y);
                let scaled = dlogit / chunk.len() as f64;
                let g_e = det.head.backward(&head_cache, &[scaled], &mut head_grads)?;
                let g_pre = crate::nn::l2_normalize_backward(&e, norm, &g_e);
                let g_h = det.proj.backward(&proj_cache, &g_pre, &mut proj_grads)?;
                det.encoder.backward(&enc_cache, &g_h, &mut enc_grads)?;
            }
            let all: Vec<&[f64]> = enc_grads
                .w
                .iter()
                .chain(enc_grads.b.iter())
                .chain(proj_grads.w.iter())
                .chain(proj_grads.b.iter())
                .chain(head_grads.w.iter())
                .chain(head_grads.b.iter())
                .map(|v| v.as_slice())
                .collect();
            let scale = clip_scale(global_grad_norm(all), cfg.train.clip_norm);
            let backbone = cfg.train.group(Group::Backbone);
            let head_cfg = cfg.train.group(Group::Head);
            opt.begin_step();
            let mut slot = 0;
            for (l, layer) in det.encoder.layers.iter_mut().enumerate() {
                opt.apply(slot, &mut layer.w, &enc_grads.w[l], backbone, scale)?;
                opt.apply(slot + 1, &mut layer.b, &enc_grads.b[l], backbone, scale)?;
                slot += 2;
            }
            for (l, layer) in det.proj.layers.iter_mut().enumerate() {
                opt.apply(slot, &mut layer.w, &proj_grads.w[l], head_cfg, scale)?;
                opt.apply(slot + 1, &mut layer.b, &proj_grads.b[l], head_cfg, scale)?;
                slot += 2;
            }
            for (l, layer) in det.head.layers.iter_mut().enumerate() {
                opt.apply(slot, &mut layer.w, &head_grads.w[l], head_cfg, scale)?;
                opt.apply(slot + 1, &mut layer.b, &head_grads.b[l], head_cfg, scale)?;
                slot += 2;
            }
        }
        let f1 = single_query_f1(&det, normal_val, adv_val)?;
        if f1 > best_f1 + 1e-9 {
            best_f1 = f1;
            best = det.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Complexity, Split, Trigger, TriggerMethod};
    use crate::guard::pairs::{build_adversarial_split, build_pair_dataset};

    fn toy_world() -> (Vec<Query>, Vec<Query>, Vec<Query>, Vec<Query>) {
        let make = |i: usize, split: Split| Query {
            id: format!("q{i:04}"),
            text: format!(
                "what is the capital of country {} number {i}",
                ["france", "spain", "japan", "kenya"][i % 4]
            ),
            complexity: Complexity::Simple,
            origin: "synthetic".into(),
            split,
        };
        let normal_train: Vec<Query> = (0..48).map(|i| make(i, Split::Train)).collect();
        let normal_val: Vec<Query> = (100..116).map(|i| make(i, Split::Val)).collect();
        // Triggers are word salads from a shared pool, the shape real
        // gray-box optimization produces over a fixed vocabulary.
        let pool = [
            "zq", "xv", "kj", "wq", "prove", "derive", "constraints", "stepwise", "integral",
            "optimize", "verify", "compound",
        ];
        let trig = |i: usize, split: Split| {
            let words: Vec<&str> = (0..4).map(|j| pool[(i * 5 + j * 3) % pool.len()]).collect();
            Trigger {
                id: format!("t-graybox-{i:03}"),
                method: TriggerMethod::GrayBox,
                text: words.join(" "),
                split,
            }
        };
        let triggers_train: Vec<Trigger> = (0..6).map(|i| trig(i, Split::Train)).collect();
        let triggers_val: Vec<Trigger> = (6..8).map(|i| trig(i, Split::Val)).collect();
        let adv_train = build_adversarial_split(&normal_train, &triggers_train, 5).unwrap();
        let adv_val = build_adversarial_split(&normal_val, &triggers_val, 5).unwrap();
        (normal_train, adv_train, normal_val, adv_val)
    }

    fn quick_cfg() -> GuardConfig {
        let mut cfg = GuardConfig {
            hash_dim: 128,
            encoder_hidden: 32,
            encoder_out: 16,
            embed_dim: 8,
            clf_hidden: 16,
            patience: 2,
            ..GuardConfig::default()
        };
        cfg.train.max_epochs = 30;
        cfg.train.batch_size = 16;
        cfg.train.warmup_steps = 6;
        cfg.train.lr_head = 5e-3;
        cfg.train.lr_backbone = 2e-3;
        cfg.train.seed = 3;
        cfg
    }

    #[test]
    fn guard_separates_toy_triggers() {
        let (normal_train, adv_train, normal_val, adv_val) = toy_world();
        let cfg = quick_cfg();
        let train_pairs = build_pair_dataset(&normal_train, &adv_train, &cfg, 6).unwrap();
        let val_pairs = build_pair_dataset(&normal_val, &adv_val, &cfg, 7).unwrap();
        let trained = train_guard(&train_pairs, &val_pairs, &cfg).unwrap();
        assert!(
            trained.best_val_f1 > 0.9,
            "validation F1 {}",
            trained.best_val_f1
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (normal_train, adv_train, normal_val, adv_val) = toy_world();
        let mut cfg = quick_cfg();
        cfg.train.max_epochs = 3;
        let train_pairs = build_pair_dataset(&normal_train, &adv_train, &cfg, 6).unwrap();
        let val_pairs = build_pair_dataset(&normal_val, &adv_val, &cfg, 7).unwrap();
        let a = train_guard(&train_pairs, &val_pairs, &cfg).unwrap();
        let b = train_guard(&train_pairs, &val_pairs, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a.model).unwrap(),
            serde_json::to_string(&b.model).unwrap()
        );
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        // Frozen mini-model; scalar probe over every encoder parameter of
        // the composite loss on one small batch.
        let (normal_train, adv_train, _, _) = toy_world();
        let mut cfg = quick_cfg();
        cfg.hash_dim = 32;
        cfg.encoder_hidden = 6;
        cfg.encoder_out = 5;
        cfg.embed_dim = 4;
        cfg.clf_hidden = 5;
        cfg.train.warmup_steps = 0;
        let pairs = build_pair_dataset(&normal_train[..8], &adv_train[..8], &cfg, 6).unwrap();
        let tensors = prepare(&pairs, cfg.hash_dim);
        let batch: Vec<&PairTensors> = tensors.iter().collect();
        let model = SiameseModel::init(&cfg, 9);

        let loss_of = |m: &SiameseModel| -> f64 {
            let mut bce_sum = 0.0;
            let mut embeddings = Vec::new();
            let mut classes = Vec::new();
            let mut weights = PairWeights::uniform(2 * batch.len());
            let mut probs = Vec::new();
            for t in &batch {
                let ca = m.encode_cached(&t.hashed_a).unwrap();
                let cb = m.encode_cached(&t.hashed_b).unwrap();
                let (logit, _) = m.classify_pair_cached(&ca.embedding, &cb.embedding).unwrap();
                let (_, loss, _) = bce_with_logit(logit, t.y);
                probs.push(sigmoid(logit));
                bce_sum += loss;
                embeddings.push(ca.embedding);
                embeddings.push(cb.embedding);
                classes.push(t.class_a);
                classes.push(t.class_b);
            }
            for (i, t) in batch.iter().enumerate() {
                if t.y == 1.0 && probs[i] <= 0.5 {
                    weights.set(2 * i, 2 * i + 1, cfg.hard_negative_weight);
                }
            }
            let sup = supcon_loss_grad(&embeddings, &classes, cfg.temperature, &weights)
                .unwrap()
                .loss;
            cfg.lambda_bce * bce_sum / batch.len() as f64 + cfg.lambda_contr * sup
        };

        let mut enc_grads = NetGrads::zeros_like(&model.encoder);
        let mut proj_grads = NetGrads::zeros_like(&model.proj);
        let mut clf_grads = NetGrads::zeros_like(&model.clf);
        batch_step(
            &model, &batch, &cfg, 10_000, // past warmup
            &mut enc_grads, &mut proj_grads, &mut clf_grads,
        )
        .unwrap();

        let h = 1e-6;
        let mut model_fd = model.clone();
        let mut checked = 0usize;
        for l in 0..model.encoder.layers.len() {
            for i in (0..model.encoder.layers[l].w.len()).step_by(7) {
                let orig = model_fd.encoder.layers[l].w[i];
                model_fd.encoder.layers[l].w[i] = orig + h;
                let up = loss_of(&model_fd);
                model_fd.encoder.layers[l].w[i] = orig - h;
                let dn = loss_of(&model_fd);
                model_fd.encoder.layers[l].w[i] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = enc_grads.w[l][i];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "encoder[{l}].w[{i}]: fd {fd} vs {an}"
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
        // Classifier and projection heads too.
        for i in 0..model.clf.layers[1].w.len() {
            let orig = model_fd.clf.layers[1].w[i];
            model_fd.clf.layers[1].w[i] = orig + h;
            let up = loss_of(&model_fd);
            model_fd.clf.layers[1].w[i] = orig - h;
            let dn = loss_of(&model_fd);
            model_fd.clf.layers[1].w[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = clf_grads.w[1][i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-4, "clf w[{i}]: fd {fd} vs {an}");
        }
        for i in (0..model.proj.layers[0].w.len()).step_by(3) {
            let orig = model_fd.proj.layers[0].w[i];
            model_fd.proj.layers[0].w[i] = orig + h;
            let up = loss_of(&model_fd);
            model_fd.proj.layers[0].w[i] = orig - h;
            let dn = loss_of(&model_fd);
            model_fd.proj.layers[0].w[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = proj_grads.w[0][i];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-4, "proj w[{i}]: fd {fd} vs {an}");
        }
    }

    #[test]
    fn shuffled_labels_sink_to_chance() {
        let (normal_train, adv_train, normal_val, adv_val) = toy_world();
        let cfg = quick_cfg();
        let mut train_pairs = build_pair_dataset(&normal_train, &adv_train, &cfg, 6).unwrap();
        let mut shuffled_val = build_pair_dataset(&normal_val, &adv_val, &cfg, 7).unwrap();
        let val_pairs = shuffled_val.clone();
        // Shuffle every training label: the pair label and the per-side
        // class tags the contrastive term reads, on both the training and
        // the selection sets, so nothing correlates with the truth.
        let mut rng = derive_rng(99, "label-shuffle", 0);
        let mut scramble = |pairs: &mut Vec<QueryPair>| {
            for p in pairs.iter_mut() {
                p.y = rng.gen_range(0..2u8);
                for side in [&mut p.a, &mut p.b] {
                    side.origin = if rng.gen_range(0..2u8) == 1 {
                        "adv:shuffled".into()
                    } else {
                        "synthetic".into()
                    };
                }
            }
        };
        scramble(&mut train_pairs);
        scramble(&mut shuffled_val);
        let trained = train_guard(&train_pairs, &shuffled_val, &cfg).unwrap();
        // Sanity floor on truly labeled pairs: chance-level separation
        // once labels carry no signal.
        let control_pairs = val_pairs.clone();
        let f1 = evaluate_pair_f1(&trained.model, &control_pairs).unwrap();
        assert!(
            (0.35..=0.68).contains(&f1),
            "label-shuffled F1 should be near chance, got {f1}"
        );
        // And far below a properly trained model on the same control set.
        let honest_pairs = build_pair_dataset(&normal_train, &adv_train, &cfg, 6).unwrap();
        let honest = train_guard(&honest_pairs, &val_pairs, &cfg).unwrap();
        let honest_f1 = evaluate_pair_f1(&honest.model, &control_pairs).unwrap();
        assert!(f1 < honest_f1);
    }

    #[test]
    fn single_query_baseline_learns_in_distribution() {
        let (normal_train, adv_train, normal_val, adv_val) = toy_world();
        let cfg = quick_cfg();
        let det =
            train_single_query_baseline(&normal_train, &adv_train, &normal_val, &adv_val, &cfg)
                .unwrap();
        let f1 = single_query_f1(&det, &normal_val, &adv_val).unwrap();
        assert!(f1 > 0.9, "in-distribution F1 {f1}");
        let det2 =
            train_single_query_baseline(&normal_train, &adv_train, &normal_val, &adv_val, &cfg)
                .unwrap();
        assert_eq!(
            serde_json::to_string(&det).unwrap(),
            serde_json::to_string(&det2).unwrap()
        );
    }
}
