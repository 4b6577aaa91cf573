//! Minimal dense-network machinery shared by routers and the guard.
//!
//! Reverse-mode gradients are implemented over a fixed operator set
//! (affine layers with ReLU/Tanh/Identity, softmax, sigmoid, L2
//! normalization, and the pair-feature ops wired up in the guard) rather
//! than a general autodiff. Training is single-threaded per model so that
//! a seed fully determines the final parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_rng;
use rand::Rng;

// ── Layers ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Parameter-group tag; groups receive their own learning rate and weight
/// decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Head,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub activation: Activation,
    pub group: Group,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

/// Activations cached by a forward pass, sufficient for backward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; `inputs[L]` is the output.
    pub inputs: Vec<Vec<f64>>,
}

/// Per-layer parameter gradients, same shapes as the net.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.w.iter_mut().chain(self.b.iter_mut()) {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
}

impl DenseNet {
    /// Seeded init: uniform in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn init(shape: &[(usize, usize, Activation, Group)], seed: u64) -> Self {
        let mut layers = Vec::with_capacity(shape.len());
        for (i, &(in_dim, out_dim, activation, group)) in shape.iter().enumerate() {
            let mut rng = derive_rng(seed, "dense-layer", i as u64);
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
                .collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                w,
                b: vec![0.0; out_dim],
                activation,
                group,
            });
        }
        DenseNet { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.in_dim() {
            return Err(Error::dim(self.in_dim(), input.len(), "net input"));
        }
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(input.to_vec());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = layer.b.clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = 0.0;
                for (wi, xi) in row.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                *zo += acc;
            }
            let a: Vec<f64> = match layer.activation {
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
                Activation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
                Activation::Identity => z,
            };
            inputs.push(a.clone());
            x = a;
        }
        Ok((x, ForwardCache { inputs }))
    }

    /// Exact reverse-mode gradients. Accumulates parameter gradients into
    /// `grads` and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grads: &mut NetGrads,
    ) -> Result<Vec<f64>> {
        if cache.inputs.len() != self.layers.len() + 1 {
            return Err(Error::invalid("forward cache does not match net"));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::dim(self.out_dim(), upstream.len(), "net upstream"));
        }
        let mut g = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.inputs[l + 1];
            let x = &cache.inputs[l];
            // dz = g * act'(z), derivative expressed through the output.
            let dz: Vec<f64> = match layer.activation {
                Activation::Relu => g
                    .iter()
                    .zip(out.iter())
                    .map(|(gi, &a)| if a > 0.0 { *gi } else { 0.0 })
                    .collect(),
                Activation::Tanh => g
                    .iter()
                    .zip(out.iter())
                    .map(|(gi, &a)| gi * (1.0 - a * a))
                    .collect(),
                Activation::Identity => g.clone(),
            };
            for (o, dzo) in dz.iter().enumerate() {
                grads.b[l][o] += dzo;
                let wrow = &mut grads.w[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (wg, xi) in wrow.iter_mut().zip(x.iter()) {
                    *wg += dzo * xi;
                }
            }
            let mut gx = vec![0.0; layer.in_dim];
            for (o, dzo) in dz.iter().enumerate() {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gi, wi) in gx.iter_mut().zip(row.iter()) {
                    *gi += dzo * wi;
                }
            }
            g = gx;
        }
        Ok(g)
    }
}

// ── Pointwise ops with explicit adjoints ───────────────────────────────

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy against a class index: loss and gradient on the logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = -(p[target].max(1e-300)).ln();
    let mut g = p;
    g[target] -= 1.0;
    (loss, g)
}

/// Gradient on the logits of `sum_{i in mask} softmax(logits)[i]`.
pub fn softmax_subset_grad(probs: &[f64], mask: &[bool]) -> Vec<f64> {
    let p_mask: f64 = probs
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|(p, _)| p)
        .sum();
    probs
        .iter()
        .zip(mask.iter())
        .map(|(&p, &m)| p * ((m as u8 as f64) - p_mask))
        .collect()
}

/// Binary cross-entropy through a logit: `(prob, loss, dloss/dlogit)`
/// for a (possibly soft) target.
pub fn bce_with_logit(logit: f64, target: f64) -> (f64, f64, f64) {
    let p = sigmoid(logit);
    let pc = p.clamp(1e-12, 1.0 - 1e-12);
    let loss = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
    (p, loss, p - target)
}

/// Adjoint of `e = z / ||z||`: maps a gradient on `e` to a gradient on `z`.
pub fn l2_normalize_backward(e: &[f64], norm: f64, g_e: &[f64]) -> Vec<f64> {
    let dot: f64 = e.iter().zip(g_e.iter()).map(|(a, b)| a * b).sum();
    e.iter()
        .zip(g_e.iter())
        .map(|(ei, gi)| (gi - ei * dot) / norm)
        .collect()
}

// ── Optimizer ──────────────────────────────────────────────────────────

/// Training hyperparameters shared by router and guard trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_head: f64,
    pub lr_backbone: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub weight_decay_backbone: f64,
    pub weight_decay_head: f64,
    pub warmup_steps: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // From-scratch defaults; the pretrained-encoder rates (3e-5) stay
        // reachable through config for encoder-swapped builds.
        TrainConfig {
            lr_head: 1e-3,
            lr_backbone: 3e-4,
            batch_size: 64,
            clip_norm: 1.0,
            weight_decay_backbone: 0.01,
            weight_decay_head: 0.001,
            warmup_steps: 0,
            max_epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_backbone > self.lr_head {
            return Err(Error::invalid("lr_backbone must be <= lr_head"));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip_norm must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be > 0"));
        }
        Ok(())
    }

    pub fn group(&self, group: Group) -> GroupParams {
        match group {
            Group::Backbone => GroupParams {
                lr: self.lr_backbone,
                weight_decay: self.weight_decay_backbone,
            },
            Group::Head => GroupParams {
                lr: self.lr_head,
                weight_decay: self.weight_decay_head,
            },
        }
    }
}

/// Per-group optimizer settings.
#[derive(Debug, Clone, Copy)]
pub struct GroupParams {
    pub lr: f64,
    pub weight_decay: f64,
}

/// AdamW with decoupled weight decay. Moment buffers are addressed by a
/// stable slot index so a model's tensor ordering fixes the state layout.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(num_slots: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            slots: vec![(Vec::new(), Vec::new()); num_slots],
        }
    }

    /// Advance the shared step counter; call once per optimizer step
    /// before applying per-tensor updates.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update one tensor. `grad_scale` carries the global-norm clipping
    /// factor computed across every tensor of the step.
    pub fn apply(
        &mut self,
        slot: usize,
        params: &mut [f64],
        grads: &[f64],
        cfg: GroupParams,
        grad_scale: f64,
    ) -> Result<()> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient in optimizer slot {slot} at step {}",
                self.t
            )));
        }
        let (m, v) = &mut self.slots[slot];
        if m.is_empty() {
            *m = vec![0.0; params.len()];
            *v = vec![0.0; params.len()];
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] * grad_scale;
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + self.eps) + cfg.weight_decay * params[i]);
        }
        Ok(())
    }
}

/// Global gradient norm across tensors.
pub fn global_grad_norm<'a, I: IntoIterator<Item = &'a [f64]>>(tensors: I) -> f64 {
    tensors
        .into_iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Scale factor that clips a global norm to `clip_norm`.
pub fn clip_scale(norm: f64, clip_norm: f64) -> f64 {
    if norm > clip_norm && norm > 0.0 {
        clip_norm / norm
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_net(w: Vec<f64>, in_dim: usize, out_dim: usize) -> DenseNet {
        DenseNet {
            layers: vec![Layer {
                in_dim,
                out_dim,
                w,
                b: vec![0.0; out_dim],
                activation: Activation::Identity,
                group: Group::Head,
            }],
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = linear_net(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let (y, _) = net.forward(&[3.0, -4.0]).unwrap();
        assert_eq!(y, vec![3.0, -4.0]);
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let mut net = linear_net(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        net.layers[0].activation = Activation::Relu;
        let (y, _) = net.forward(&[-3.0, -0.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn stacked_identity_layers_equal_matrix_product() {
        // Oracle: dense matrix multiply computed directly.
        let a = vec![1.0, 2.0, -1.0, 0.5]; // 2x2
        let b = vec![0.3, -0.7, 1.5, 0.25]; // 2x2
        let net = DenseNet {
            layers: vec![
                Layer {
                    in_dim: 2,
                    out_dim: 2,
                    w: a.clone(),
                    b: vec![0.0; 2],
                    activation: Activation::Identity,
                    group: Group::Backbone,
                },
                Layer {
                    in_dim: 2,
                    out_dim: 2,
                    w: b.clone(),
                    b: vec![0.0; 2],
                    activation: Activation::Identity,
                    group: Group::Head,
                },
            ],
        };
        // product = B * A
        let mut prod = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    prod[i * 2 + j] += b[i * 2 + k] * a[k * 2 + j];
                }
            }
        }
        let x = [0.9, -1.1];
        let (y, _) = net.forward(&x).unwrap();
        let expect = [
            prod[0] * x[0] + prod[1] * x[1],
            prod[2] * x[0] + prod[3] * x[1],
        ];
        assert!((y[0] - expect[0]).abs() < 1e-12);
        assert!((y[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn linear_input_gradient_is_w_transpose_upstream() {
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let net = linear_net(w.clone(), 3, 2);
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let mut grads = NetGrads::zeros_like(&net);
        let up = [1.0, -1.0];
        let gx = net.backward(&cache, &up, &mut grads).unwrap();
        for j in 0..3 {
            let expect = w[j] * up[0] + w[3 + j] * up[1];
            assert!((gx[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = DenseNet::init(
            &[
                (3, 4, Activation::Tanh, Group::Backbone),
                (4, 2, Activation::Identity, Group::Head),
            ],
            5,
        );
        let (_, cache) = net.forward(&[0.5, -0.2, 0.8]).unwrap();
        let mut grads = NetGrads::zeros_like(&net);
        let gx = net.backward(&cache, &[0.0, 0.0], &mut grads).unwrap();
        assert!(gx.iter().all(|&g| g == 0.0));
        assert!(grads.w.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.b.iter().flatten().all(|&g| g == 0.0));
    }

    /// Central finite differences of 0.5*||net(x)||^2 over every parameter.
    #[test]
    fn two_layer_gradients_match_finite_differences() {
        let shape = [
            (4usize, 5usize, Activation::Tanh, Group::Backbone),
            (5, 3, Activation::Relu, Group::Head),
        ];
        let mut net = DenseNet::init(&shape, 42);
        let x = [0.3, -0.6, 0.9, 0.15];
        let loss_of = |net: &DenseNet| {
            let (y, _) = net.forward(&x).unwrap();
            0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };
        let (y, cache) = net.forward(&x).unwrap();
        let mut grads = NetGrads::zeros_like(&net);
        net.backward(&cache, &y, &mut grads).unwrap();

        let h = 1e-6;
        for l in 0..net.layers.len() {
            for i in 0..net.layers[l].w.len() {
                let orig = net.layers[l].w[i];
                net.layers[l].w[i] = orig + h;
                let lp = loss_of(&net);
                net.layers[l].w[i] = orig - h;
                let lm = loss_of(&net);
                net.layers[l].w[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.w[l][i];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-4,
                    "layer {l} w[{i}]: fd={fd} analytic={an}"
                );
            }
            for i in 0..net.layers[l].b.len() {
                let orig = net.layers[l].b[i];
                net.layers[l].b[i] = orig + h;
                let lp = loss_of(&net);
                net.layers[l].b[i] = orig - h;
                let lm = loss_of(&net);
                net.layers[l].b[i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.b[l][i];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!((fd - an).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn pooled_gradient_matches_finite_differences_through_one_row() {
        use crate::embed::EmbeddingTable;
        let mut table = EmbeddingTable::init(6, 4, 3);
        let net = DenseNet::init(&[(4, 1, Activation::Tanh, Group::Head)], 7);
        let tokens = [2usize, 5, 2];
        let loss_of = |table: &EmbeddingTable| {
            let pooled = table.mean_pool(&tokens).unwrap();
            net.forward(&pooled).unwrap().0[0]
        };
        let pooled = table.mean_pool(&tokens).unwrap();
        let (_, cache) = net.forward(&pooled).unwrap();
        let mut grads = NetGrads::zeros_like(&net);
        let g_pooled = net.backward(&cache, &[1.0], &mut grads).unwrap();
        let mut grad_rows = vec![0.0; table.rows.len()];
        table.accumulate_pool_grad(&tokens, &g_pooled, &mut grad_rows);

        let h = 1e-6;
        for j in 0..4 {
            // token 2 appears twice, so its row gradient is 2/3 of g_pooled
            let idx = 2 * 4 + j;
            let orig = table.rows[idx];
            table.rows[idx] = orig + h;
            let lp = loss_of(&table);
            table.rows[idx] = orig - h;
            let lm = loss_of(&table);
            table.rows[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grad_rows[idx];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            assert!((fd - an).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn adamw_zero_grad_zero_decay_leaves_params() {
        let mut opt = AdamW::new(1);
        let mut p = vec![1.5, -2.5];
        opt.begin_step();
        opt.apply(
            0,
            &mut p,
            &[0.0, 0.0],
            GroupParams {
                lr: 0.1,
                weight_decay: 0.0,
            },
            1.0,
        )
        .unwrap();
        assert_eq!(p, vec![1.5, -2.5]);
    }

    #[test]
    fn clip_halves_a_norm_two_gradient() {
        let g = vec![2.0f64];
        let norm = global_grad_norm([g.as_slice()]);
        assert_eq!(norm, 2.0);
        assert_eq!(clip_scale(norm, 1.0), 0.5);
        assert_eq!(clip_scale(0.5, 1.0), 1.0);
    }

    #[test]
    fn adamw_single_step_matches_hand_computation() {
        // Scalar quadratic f(p) = 0.5*(p-3)^2 at p=1: grad = -2.
        let mut opt = AdamW::new(1);
        let mut p = vec![1.0];
        let g = -2.0;
        let (lr, wd) = (0.01, 0.1);
        opt.begin_step();
        opt.apply(
            0,
            &mut p,
            &[g],
            GroupParams {
                lr,
                weight_decay: wd,
            },
            1.0,
        )
        .unwrap();
        // Hand-computed first AdamW step: m_hat = g, v_hat = g^2, so the
        // moment term is sign(g) up to eps, plus decoupled decay on p=1.
        let m_hat = (1.0 - 0.9) * g / (1.0 - 0.9);
        let v_hat = (1.0 - 0.999) * g * g / (1.0 - 0.999);
        let expect = 1.0 - lr * (m_hat / (v_hat.sqrt() + 1e-8) + wd * 1.0);
        assert!((p[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_aborts_with_diagnostic() {
        let mut opt = AdamW::new(1);
        let mut p = vec![1.0];
        opt.begin_step();
        let err = opt
            .apply(
                0,
                &mut p,
                &[f64::NAN],
                GroupParams {
                    lr: 0.1,
                    weight_decay: 0.0,
                },
                1.0,
            )
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn groups_receive_their_own_learning_rates() {
        // Same gradient through two slots with different group configs:
        // the spy here is the parameter delta itself.
        let mut opt = AdamW::new(2);
        let mut backbone = vec![1.0];
        let mut head = vec![1.0];
        opt.begin_step();
        opt.apply(
            0,
            &mut backbone,
            &[1.0],
            GroupParams {
                lr: 3e-4,
                weight_decay: 0.0,
            },
            1.0,
        )
        .unwrap();
        opt.apply(
            1,
            &mut head,
            &[1.0],
            GroupParams {
                lr: 1e-3,
                weight_decay: 0.0,
            },
            1.0,
        )
        .unwrap();
        let d_backbone = 1.0 - backbone[0];
        let d_head = 1.0 - head[0];
        assert!(d_head > d_backbone);
        assert!((d_head / d_backbone - 1e-3 / 3e-4).abs() < 1e-6);
    }

    #[test]
    fn softmax_subset_grad_matches_finite_differences() {
        let logits = vec![0.2, -0.5, 0.9, 0.1, -0.3];
        let mask = vec![false, false, false, true, true];
        let p = softmax(&logits);
        let g = softmax_subset_grad(&p, &mask);
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp[i] += h;
            let mut lm = logits.clone();
            lm[i] -= h;
            let f = |l: &[f64]| {
                softmax(l)
                    .iter()
                    .zip(mask.iter())
                    .filter(|(_, &m)| m)
                    .map(|(p, _)| p)
                    .sum::<f64>()
            };
            let fd = (f(&lp) - f(&lm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn l2_normalize_backward_matches_finite_differences() {
        let z = vec![0.4, -1.2, 0.7];
        let norm = crate::embed::l2_norm(&z);
        let e: Vec<f64> = z.iter().map(|x| x / norm).collect();
        let g_e = vec![0.3, 0.9, -0.5];
        let g_z = l2_normalize_backward(&e, norm, &g_e);
        let h = 1e-7;
        let f = |z: &[f64]| {
            let n = crate::embed::l2_norm(z);
            z.iter()
                .zip(g_e.iter())
                .map(|(zi, gi)| zi / n * gi)
                .sum::<f64>()
        };
        for i in 0..3 {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((fd - g_z[i]).abs() < 1e-6, "fd={fd} an={}", g_z[i]);
        }
    }
}
