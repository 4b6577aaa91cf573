//! Detector losses: binary cross-entropy over pair probabilities and the
//! weighted supervised contrastive loss with analytic gradients.

use crate::error::{Error, Result};

/// Mean binary cross-entropy over probabilities in `(0,1)`; inputs are
/// clamped at `1e-12` from either end.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim(predictions.len(), labels.len(), "bce"));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("bce batch".into()));
    }
    let mut sum = 0.0;
    for (&p, &y) in predictions.iter().zip(labels.iter()) {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(sum / predictions.len() as f64)
}

/// Denominator weights for the contrastive loss, symmetric by
/// construction; hard negative pairs carry an up-weight.
#[derive(Debug, Clone)]
pub struct PairWeights {
    n: usize,
    w: Vec<f64>,
}

impl PairWeights {
    pub fn uniform(n: usize) -> Self {
        PairWeights {
            n,
            w: vec![1.0; n * n],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, weight: f64) {
        self.w[i * self.n + j] = weight;
        self.w[j * self.n + i] = weight;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }
}

#[derive(Debug, Clone)]
pub struct SupConResult {
    pub loss: f64,
    /// Gradient with respect to each input embedding.
    pub grads: Vec<Vec<f64>>,
    /// Anchors without any positive, excluded from the average.
    pub skipped_anchors: usize,
}

/// Supervised contrastive loss over unit embeddings.
///
/// For each anchor with at least one same-class partner, positives are
/// the same-class indices (self excluded) and the denominator runs over
/// all other indices, each term scaled by its pair weight. Anchors
/// without positives are excluded from the average.
pub fn supcon_loss_grad(
    embeddings: &[Vec<f64>],
    classes: &[u8],
    temperature: f64,
    weights: &PairWeights,
) -> Result<SupConResult> {
    let n = embeddings.len();
    if n != classes.len() {
        return Err(Error::dim(n, classes.len(), "supcon classes"));
    }
    if n < 2 {
        return Err(Error::invalid("supcon needs at least 2 embeddings"));
    }
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be > 0"));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::invalid("supcon embeddings have mixed dimensions"));
    }

    // Pairwise similarities (unit embeddings, so the dot product is the
    // cosine).
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = embeddings[i]
                .iter()
                .zip(embeddings[j].iter())
                .map(|(a, b)| a * b)
                .sum();
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }

    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && classes[j] == classes[i]))
        .collect();
    let skipped = n - anchors.len();
    if skipped > 0 {
        log::debug!("supcon: {skipped} anchors without positives excluded");
    }
    if anchors.is_empty() {
        return Ok(SupConResult {
            loss: 0.0,
            grads: vec![vec![0.0; dim]; n],
            skipped_anchors: skipped,
        });
    }

    let inv_anchors = 1.0 / anchors.len() as f64;
    let mut loss = 0.0;
    // Coefficients on each ordered similarity s_{ik}.
    let mut coeff = vec![0.0; n * n];
    for &i in &anchors {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && classes[j] == classes[i])
            .collect();
        let inv_p = 1.0 / positives.len() as f64;
        // log-sum-exp over the denominator with a stability shift
        let mut max_z = f64::NEG_INFINITY;
        for k in 0..n {
            if k != i {
                max_z = max_z.max(sim[i * n + k] / temperature);
            }
        }
        let mut z_sum = 0.0;
        for k in 0..n {
            if k != i {
                z_sum += weights.get(i, k) * ((sim[i * n + k] / temperature) - max_z).exp();
            }
        }
        let log_z = max_z + z_sum.ln();

        let mut term = 0.0;
        for &j in &positives {
            term += sim[i * n + j] / temperature - log_z;
            coeff[i * n + j] -= inv_anchors * inv_p / temperature;
        }
        loss -= inv_anchors * inv_p * term;
        // denominator gradient: every positive term contributes one log_z
        for k in 0..n {
            if k == i {
                continue;
            }
            let soft = weights.get(i, k) * ((sim[i * n + k] / temperature) - max_z).exp() / z_sum;
            coeff[i * n + k] += inv_anchors * soft / temperature;
        }
    }

    let mut grads = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for k in 0..n {
            let c = coeff[i * n + k];
            if c == 0.0 {
                continue;
            }
            for d in 0..dim {
                grads[i][d] += c * embeddings[k][d];
                grads[k][d] += c * embeddings[i][d];
            }
        }
    }

    Ok(SupConResult {
        loss,
        grads,
        skipped_anchors: skipped,
    })
}

/// Loss value only.
pub fn supcon_loss(
    embeddings: &[Vec<f64>],
    classes: &[u8],
    temperature: f64,
    weights: &PairWeights,
) -> Result<f64> {
    Ok(supcon_loss_grad(embeddings, classes, temperature, weights)?.loss)
}

/// Contrastive warmup ramp: 0 at step 0, 1 from `warmup_steps` on.
pub fn contrastive_ramp(step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        1.0
    } else {
        (step as f64 / warmup_steps as f64).min(1.0)
    }
}

/// `lambda_bce * L_bce + lambda_contr * ramp(step) * L_supcon`.
pub fn composite_loss(
    bce: f64,
    supcon: f64,
    lambda_bce: f64,
    lambda_contr: f64,
    step: usize,
    warmup_steps: usize,
) -> f64 {
    lambda_bce * bce + lambda_contr * contrastive_ramp(step, warmup_steps) * supcon
}
