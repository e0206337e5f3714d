//! Loss functions with analytic gradients.
//!
//! Values are accumulated in `f64`; gradients are returned in `f32` with the
//! same shape as the corresponding input.

use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewD, Axis};
use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::data::ImageBatch;
use crate::error::{Error, Result};

/// Log arguments are clamped to `[LOG_EPS, 1 - LOG_EPS]`.
pub const LOG_EPS: f64 = 1e-8;

/// Relative weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub adv: f32,
    pub cycle: f32,
    pub feature_match: f32,
    pub gradient_penalty: f32,
    pub travel: f32,
    /// Weight of the siamese anti-collapse hinge.
    pub siamese_margin: f32,
    /// Margin of that hinge, in embedding units.
    pub margin: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            adv: 1.0,
            cycle: 10.0,
            feature_match: 1.0,
            gradient_penalty: 10.0,
            travel: 10.0,
            siamese_margin: 10.0,
            margin: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("adv", self.adv),
            ("cycle", self.cycle),
            ("feature_match", self.feature_match),
            ("gradient_penalty", self.gradient_penalty),
            ("travel", self.travel),
            ("siamese_margin", self.siamese_margin),
            ("margin", self.margin),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("loss_weights.{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Adversarial loss family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialKind {
    /// Cross-entropy discriminator, non-saturating generator.
    Minimax,
    LeastSquares,
    Wasserstein,
}

/// Discriminator and generator losses plus their score gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvLoss {
    pub loss_d: f64,
    pub loss_g: f64,
    /// ∂loss_d/∂d_real
    pub grad_d_real: Vec<f32>,
    /// ∂loss_d/∂d_fake
    pub grad_d_fake: Vec<f32>,
    /// ∂loss_g/∂d_fake
    pub grad_g_fake: Vec<f32>,
}

fn non_empty(real: &[f32], fake: &[f32]) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidArgument("score arrays must be non-empty".into()));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(clamp(p))` and its derivative with respect to the logit.
fn neg_log_clamped(p: f64, dp_dx: f64) -> (f64, f64) {
    let clamped = p.clamp(LOG_EPS, 1.0 - LOG_EPS);
    let grad = if clamped == p { -dp_dx / p } else { 0.0 };
    (-clamped.ln(), grad)
}

/// Standard cross-entropy GAN loss on raw logits:
/// `loss_d = -mean ln σ(real) - mean ln(1 - σ(fake))`,
/// `loss_g = -mean ln σ(fake)`.
pub fn adv_loss_minimax(d_real: &[f32], d_fake: &[f32]) -> Result<AdvLoss> {
    non_empty(d_real, d_fake)?;
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    let mut loss_d = 0.0;
    let mut loss_g = 0.0;
    let mut grad_d_real = Vec::with_capacity(d_real.len());
    for &x in d_real {
        let p = sigmoid(x as f64);
        let (l, g) = neg_log_clamped(p, p * (1.0 - p));
        loss_d += l / nr;
        grad_d_real.push((g / nr) as f32);
    }
    let mut grad_d_fake = Vec::with_capacity(d_fake.len());
    let mut grad_g_fake = Vec::with_capacity(d_fake.len());
    for &x in d_fake {
        let p = sigmoid(x as f64);
        let q = sigmoid(-(x as f64));
        let (ld, gd) = neg_log_clamped(q, -p * q);
        loss_d += ld / nf;
        grad_d_fake.push((gd / nf) as f32);
        let (lg, gg) = neg_log_clamped(p, p * q);
        loss_g += lg / nf;
        grad_g_fake.push((gg / nf) as f32);
    }
    Ok(AdvLoss { loss_d, loss_g, grad_d_real, grad_d_fake, grad_g_fake })
}

/// Least-squares GAN loss with real label 1 and fake label 0.
pub fn lsgan_loss(d_real: &[f32], d_fake: &[f32]) -> Result<AdvLoss> {
    non_empty(d_real, d_fake)?;
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    let mut loss_d = 0.0;
    let mut loss_g = 0.0;
    let grad_d_real = d_real
        .iter()
        .map(|&x| {
            let d = x as f64 - 1.0;
            loss_d += 0.5 * d * d / nr;
            (d / nr) as f32
        })
        .collect();
    let mut grad_g_fake = Vec::with_capacity(d_fake.len());
    let grad_d_fake = d_fake
        .iter()
        .map(|&x| {
            let x = x as f64;
            loss_d += 0.5 * x * x / nf;
            loss_g += 0.5 * (x - 1.0) * (x - 1.0) / nf;
            grad_g_fake.push(((x - 1.0) / nf) as f32);
            (x / nf) as f32
        })
        .collect();
    Ok(AdvLoss { loss_d, loss_g, grad_d_real, grad_d_fake, grad_g_fake })
}

/// Wasserstein critic loss `mean(fake) - mean(real)`; generator `-mean(fake)`.
pub fn wasserstein_loss(d_real: &[f32], d_fake: &[f32]) -> Result<AdvLoss> {
    non_empty(d_real, d_fake)?;
    let (nr, nf) = (d_real.len() as f64, d_fake.len() as f64);
    let mean_r = d_real.iter().map(|&x| x as f64).sum::<f64>() / nr;
    let mean_f = d_fake.iter().map(|&x| x as f64).sum::<f64>() / nf;
    Ok(AdvLoss {
        loss_d: mean_f - mean_r,
        loss_g: -mean_f,
        grad_d_real: vec![(-1.0 / nr) as f32; d_real.len()],
        grad_d_fake: vec![(1.0 / nf) as f32; d_fake.len()],
        grad_g_fake: vec![(-1.0 / nf) as f32; d_fake.len()],
    })
}

pub fn adversarial_loss(kind: AdversarialKind, d_real: &[f32], d_fake: &[f32]) -> Result<AdvLoss> {
    match kind {
        AdversarialKind::Minimax => adv_loss_minimax(d_real, d_fake),
        AdversarialKind::LeastSquares => lsgan_loss(d_real, d_fake),
        AdversarialKind::Wasserstein => wasserstein_loss(d_real, d_fake),
    }
}

/// A scalar loss and its gradient with respect to one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarLoss {
    pub value: f64,
    pub grad: ArrayD<f32>,
}

fn same_shape(a: &ArrayViewD<f32>, b: &ArrayViewD<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeError(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference; gradient with respect to `reconstructed`.
pub fn cycle_loss(original: ArrayViewD<f32>, reconstructed: ArrayViewD<f32>) -> Result<ScalarLoss> {
    same_shape(&original, &reconstructed)?;
    let n = original.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = ArrayD::zeros(reconstructed.raw_dim());
    ndarray::Zip::from(&mut grad).and(&original).and(&reconstructed).for_each(|g, &o, &r| {
        let d = r as f64 - o as f64;
        value += d.abs();
        *g = if d > 0.0 {
            (1.0 / n) as f32
        } else if d < 0.0 {
            (-1.0 / n) as f32
        } else {
            0.0
        };
    });
    Ok(ScalarLoss { value: value / n, grad })
}

/// Mean squared difference; gradient with respect to `reconstructed`.
pub fn mse_loss(original: ArrayViewD<f32>, reconstructed: ArrayViewD<f32>) -> Result<ScalarLoss> {
    same_shape(&original, &reconstructed)?;
    let n = original.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = ArrayD::zeros(reconstructed.raw_dim());
    ndarray::Zip::from(&mut grad).and(&original).and(&reconstructed).for_each(|g, &o, &r| {
        let d = r as f64 - o as f64;
        value += d * d;
        *g = (2.0 * d / n) as f32;
    });
    Ok(ScalarLoss { value: value / n, grad })
}

/// Feature matching: `Σ_layers ‖mean_batch(real) - mean_batch(fake)‖₂`.
/// Gradients are with respect to each fake feature array.
pub fn feature_matching_loss(
    real_feats: &[ArrayViewD<f32>],
    fake_feats: &[ArrayViewD<f32>],
) -> Result<(f64, Vec<ArrayD<f32>>)> {
    if real_feats.len() != fake_feats.len() {
        return Err(Error::ShapeError(format!("{} real layers vs {} fake layers", real_feats.len(), fake_feats.len())));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(fake_feats.len());
    for (real, fake) in real_feats.iter().zip(fake_feats) {
        if real.ndim() == 0 || fake.ndim() == 0 || real.shape()[1..] != fake.shape()[1..] {
            return Err(Error::ShapeError(format!("feature shapes {:?} vs {:?}", real.shape(), fake.shape())));
        }
        let nf = fake.shape()[0];
        if real.shape()[0] == 0 || nf == 0 {
            return Err(Error::ShapeError("empty feature batch".into()));
        }
        let mean_r = real.mapv(|v| v as f64).mean_axis(Axis(0)).expect("non-empty");
        let mean_f = fake.mapv(|v| v as f64).mean_axis(Axis(0)).expect("non-empty");
        let diff = &mean_f - &mean_r;
        let dist = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        total += dist;
        let mut grad = ArrayD::<f32>::zeros(fake.raw_dim());
        if dist > 0.0 {
            let per = diff.mapv(|d| (d / dist / nf as f64) as f32);
            for mut row in grad.axis_iter_mut(Axis(0)) {
                row.assign(&per);
            }
        }
        grads.push(grad);
    }
    Ok((total, grads))
}

/// Transformation-vector loss with gradients for both embedding sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_inputs: Array2<f32>,
    pub grad_translated: Array2<f32>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean over unordered pairs `i<j` of `(1 - cos(v_ij, v'_ij)) + ‖v_ij - v'_ij‖₂`
/// where `v_ij = S(x_i) - S(x_j)` and `v'_ij = S(G(x_i)) - S(G(x_j))`.
/// A pair with a zero vector has cosine 0.
pub fn travel_loss_embeddings(inputs: ArrayView2<f32>, translated: ArrayView2<f32>) -> Result<PairLoss> {
    if inputs.dim() != translated.dim() {
        return Err(Error::ShapeError(format!("{:?} vs {:?}", inputs.dim(), translated.dim())));
    }
    let (n, d) = inputs.dim();
    if n < 2 {
        return Err(Error::TooFewSamples("transformation vectors need at least two images".into()));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut value = 0.0;
    let mut gi = Array2::<f64>::zeros((n, d));
    let mut gt = Array2::<f64>::zeros((n, d));
    let mut a = vec![0.0f64; d];
    let mut b = vec![0.0f64; d];
    for i in 0..n {
        for j in i + 1..n {
            for k in 0..d {
                a[k] = inputs[[i, k]] as f64 - inputs[[j, k]] as f64;
                b[k] = translated[[i, k]] as f64 - translated[[j, k]] as f64;
            }
            let (na, nb) = (norm(&a), norm(&b));
            let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let nd = norm(&diff);
            let cos =
                if na > 0.0 && nb > 0.0 { a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb) } else { 0.0 };
            value += (1.0 - cos) + nd;
            for k in 0..d {
                let (mut da, mut db) = (0.0, 0.0);
                if na > 0.0 && nb > 0.0 {
                    da -= b[k] / (na * nb) - cos * a[k] / (na * na);
                    db -= a[k] / (na * nb) - cos * b[k] / (nb * nb);
                }
                if nd > 0.0 {
                    da += diff[k] / nd;
                    db -= diff[k] / nd;
                }
                gi[[i, k]] += da / pairs;
                gi[[j, k]] -= da / pairs;
                gt[[i, k]] += db / pairs;
                gt[[j, k]] -= db / pairs;
            }
        }
    }
    Ok(PairLoss { value: value / pairs, grad_inputs: gi.mapv(|v| v as f32), grad_translated: gt.mapv(|v| v as f32) })
}

/// `mean(max(0, margin - d))` over pair distances.
pub fn margin_hinge_mean(distances: &[f64], margin: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.iter().map(|d| (margin - d).max(0.0)).sum::<f64>() / distances.len() as f64
}

/// Mean over pairs of `max(0, margin - ‖e_i - e_j‖₂)`; gradient with respect
/// to the embeddings.
pub fn siamese_margin_loss_embeddings(emb: ArrayView2<f32>, margin: f32) -> Result<ScalarLoss> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be positive, got {margin}")));
    }
    let (n, d) = emb.dim();
    if n < 2 {
        return Err(Error::TooFewSamples("margin loss needs at least two images".into()));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut value = 0.0;
    let mut grad = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        for j in i + 1..n {
            let diff: Vec<f64> = (0..d).map(|k| emb[[i, k]] as f64 - emb[[j, k]] as f64).collect();
            let dist = norm(&diff);
            let gap = margin as f64 - dist;
            if gap > 0.0 {
                value += gap;
                if dist > 0.0 {
                    for k in 0..d {
                        let g = diff[k] / dist / pairs;
                        grad[[i, k]] -= g;
                        grad[[j, k]] += g;
                    }
                }
            }
        }
    }
    Ok(ScalarLoss { value: value / pairs, grad: grad.mapv(|v| v as f32).into_dyn() })
}

/// [`travel_loss_embeddings`] on the siamese embeddings of two image batches.
pub fn travel_loss(siamese: &Network, inputs: &ImageBatch, translated: &ImageBatch) -> Result<f64> {
    if !inputs.same_geometry(translated) || inputs.len() != translated.len() {
        return Err(Error::ShapeError("translated batch is not parallel to inputs".into()));
    }
    if inputs.len() < 2 {
        return Err(Error::TooFewSamples("transformation vectors need at least two images".into()));
    }
    let a = siamese.embed(&inputs.to_tensor());
    let b = siamese.embed(&translated.to_tensor());
    Ok(travel_loss_embeddings(a.view(), b.view())?.value)
}

/// [`siamese_margin_loss_embeddings`] on the embeddings of an image batch.
pub fn siamese_margin_loss(siamese: &Network, inputs: &ImageBatch, margin: f32) -> Result<f64> {
    if inputs.len() < 2 {
        return Err(Error::TooFewSamples("margin loss needs at least two images".into()));
    }
    let e = siamese.embed(&inputs.to_tensor());
    Ok(siamese_margin_loss_embeddings(e.view(), margin)?.value)
}
