//! WGAN-GP gradient penalty `λ·E[(‖∇D(x̂)‖₂ − 1)²]` at random interpolates.

use ndarray::{Array4, Axis, Zip};
use privtranslate_nn::{Module, Tensor};
use rand::Rng;

use super::network::Network;
use crate::error::{Error, Result};

/// A scalar-per-sample scoring function.
pub trait Critic {
    fn critic_values(&mut self, x: &Tensor) -> Vec<f32>;

    /// `∂D(x_i)/∂x_i` for every sample, or `None` when the critic cannot
    /// provide input gradients.
    fn input_gradient(&mut self, x: &Tensor) -> Option<Tensor>;
}

impl Critic for Network {
    /// Mean of the patch map.
    fn critic_values(&mut self, x: &Tensor) -> Vec<f32> {
        self.infer(x).axis_iter(Axis(0)).map(|s| s.mean().unwrap_or(0.0)).collect()
    }

    fn input_gradient(&mut self, x: &Tensor) -> Option<Tensor> {
        let mut saved = Vec::new();
        self.body.visit("", &mut |_, p| saved.push(p.grad.clone()));
        let out = self.forward(x);
        let per = 1.0 / (out.len() / out.len_of(Axis(0))) as f32;
        let g = self.backward(&Array4::from_elem(out.raw_dim(), per));
        let mut it = saved.into_iter();
        self.body.visit_mut("", &mut |_, p| p.grad = it.next().expect("same parameters"));
        Some(g)
    }
}

/// Penalty value plus what a trainer needs to differentiate it.
#[derive(Debug, Clone)]
pub struct PenaltyEval {
    pub value: f64,
    pub interpolates: Tensor,
    pub input_grads: Tensor,
    pub norms: Vec<f64>,
}

/// `x̂ = ε·real + (1−ε)·fake` with one `ε ~ U(0,1)` per sample.
pub fn interpolate<R: Rng>(real: &Tensor, fake: &Tensor, rng: &mut R) -> Result<Tensor> {
    if real.dim() != fake.dim() {
        return Err(Error::ShapeError(format!("{:?} vs {:?}", real.dim(), fake.dim())));
    }
    let mut out = fake.clone();
    for (i, mut sample) in out.axis_iter_mut(Axis(0)).enumerate() {
        let eps: f32 = rng.random();
        Zip::from(&mut sample).and(real.index_axis(Axis(0), i)).for_each(|o, &r| *o = eps * r + (1.0 - eps) * *o);
    }
    Ok(out)
}

/// Penalty at the given interpolates.
pub fn gradient_penalty_at(critic: &mut dyn Critic, interpolates: &Tensor, lambda_gp: f32) -> Result<PenaltyEval> {
    if lambda_gp < 0.0 {
        return Err(Error::InvalidArgument("lambda_gp must be non-negative".into()));
    }
    let grads = critic.input_gradient(interpolates).ok_or(Error::UnsupportedModel)?;
    let norms: Vec<f64> =
        grads.axis_iter(Axis(0)).map(|g| g.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()).collect();
    let n = norms.len().max(1) as f64;
    let value = lambda_gp as f64 * norms.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / n;
    Ok(PenaltyEval { value, interpolates: interpolates.clone(), input_grads: grads, norms })
}

/// Draw interpolates between `real` and `fake` and evaluate the penalty.
pub fn gradient_penalty<R: Rng>(
    critic: &mut dyn Critic,
    real: &Tensor,
    fake: &Tensor,
    lambda_gp: f32,
    rng: &mut R,
) -> Result<f64> {
    let x = interpolate(real, fake, rng)?;
    Ok(gradient_penalty_at(critic, &x, lambda_gp)?.value)
}

/// Accumulate `∂penalty/∂θ` into the critic's parameter gradients.
///
/// With `g_i = ∇ₓD(x̂_i)` and `û_i = g_i/‖g_i‖`,
/// `∂/∂θ (‖g_i‖−1)² = 2(‖g_i‖−1)·∂/∂θ(û_i·g_i)`, and the directional derivative
/// `û_i·g_i` is evaluated as the central difference
/// `(D(x̂_i+hû_i) − D(x̂_i−hû_i))/2h`, which is exact for piecewise-linear
/// critics away from activation kinks.
pub fn accumulate_penalty_grad(critic: &mut Network, eval: &PenaltyEval, lambda_gp: f32, h: f32) {
    let n = eval.norms.len();
    if n == 0 || lambda_gp == 0.0 {
        return;
    }
    let (_, c, hh, ww) = eval.interpolates.dim();
    let mut probes = Array4::<f32>::zeros((2 * n, c, hh, ww));
    let mut weights = Vec::with_capacity(2 * n);
    for i in 0..n {
        let norm = eval.norms[i] as f32;
        let coef = 2.0 * lambda_gp * (eval.norms[i] as f32 - 1.0) / n as f32 / (2.0 * h);
        let x = eval.interpolates.index_axis(Axis(0), i);
        let g = eval.input_grads.index_axis(Axis(0), i);
        for (slot, sign) in [(i, 1.0f32), (n + i, -1.0f32)] {
            let mut p = probes.index_axis_mut(Axis(0), slot);
            Zip::from(&mut p).and(&x).and(&g).for_each(|o, &xv, &gv| {
                let dir = if norm > 0.0 { gv / norm } else { 0.0 };
                *o = xv + sign * h * dir;
            });
        }
        weights.push(coef);
    }
    let weights: Vec<f32> = weights.iter().copied().chain(weights.iter().map(|w| -w)).collect();
    let out = critic.forward(&probes);
    let per = (out.len() / out.len_of(Axis(0))) as f32;
    let mut grad = Array4::<f32>::zeros(out.raw_dim());
    for (i, mut s) in grad.axis_iter_mut(Axis(0)).enumerate() {
        s.fill(weights[i] / per);
    }
    critic.backward(&grad);
}
