//! One optimisation step of each framework.

use std::collections::BTreeMap;

use ndarray::{Array4, ArrayViewD};
use privtranslate_nn::{Adam, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gan_core::{
    accumulate_penalty_grad, adversarial_loss, cycle_loss, feature_matching_loss, flatten, gradient_penalty_at,
    interpolate, siamese_margin_loss_embeddings, travel_loss_embeddings, unflatten, Network,
};

/// Finite-difference step for the penalty's parameter gradient.
const GP_PROBE: f32 = 1e-2;

/// Endless stream of shuffled indices; every index appears once per pass.
pub(crate) struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Batcher { order, pos: 0, rng }
    }

    pub fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn scores(t: &Tensor) -> Vec<f32> {
    t.iter().copied().collect()
}

fn score_grad(grad: &[f32], scale: f32, like: &Tensor) -> Tensor {
    Array4::from_shape_vec(like.raw_dim(), grad.iter().map(|g| g * scale).collect()).expect("score layout")
}

fn dyn_view(t: &Tensor) -> ArrayViewD<'_, f32> {
    t.view().into_dyn()
}

fn to4(a: ndarray::ArrayD<f32>) -> Tensor {
    a.into_dimensionality().expect("4-d")
}

pub(crate) fn ensure_finite(net: &Network, step: u64, name: &str) -> Result<()> {
    if net.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { step, network: name.into() })
    }
}

/// Generator-side adversarial term (plus optional feature matching) and its
/// gradient with respect to the fake batch. Discriminator gradients produced
/// along the way are discarded.
fn generator_adversarial(
    d: &mut Network,
    fake: &Tensor,
    real: &Tensor,
    config: &TrainConfig,
    components: &mut BTreeMap<String, f64>,
) -> Result<(f64, Tensor)> {
    let w = &config.loss_weights;
    let kind = config.adversarial_kind();
    let (loss, grad) = if config.use_feature_matching {
        let (_, real_feats) = d.forward_features(real);
        let (out, fake_feats) = d.forward_features(fake);
        let s = scores(&out);
        let adv = adversarial_loss(kind, &s, &s)?;
        let rv: Vec<_> = real_feats.iter().map(dyn_view).collect();
        let fv: Vec<_> = fake_feats.iter().map(dyn_view).collect();
        let (fm, fm_grads) = feature_matching_loss(&rv, &fv)?;
        let fm_grads: Vec<Tensor> = fm_grads.into_iter().map(|g| to4(g) * w.feature_match).collect();
        let gx = d.backward_features(&score_grad(&adv.grad_g_fake, w.adv, &out), fm_grads);
        *components.entry("feature_match".into()).or_default() += fm;
        (w.adv as f64 * adv.loss_g + w.feature_match as f64 * fm, gx)
    } else {
        let out = d.forward(fake);
        let s = scores(&out);
        let adv = adversarial_loss(kind, &s, &s)?;
        let gx = d.backward(&score_grad(&adv.grad_g_fake, w.adv, &out));
        (w.adv as f64 * adv.loss_g, gx)
    };
    d.clear_cache();
    d.zero_grad();
    Ok((loss, grad))
}

/// One discriminator (critic) update; returns `(loss_d, penalty)`.
pub(crate) fn discriminator_step(
    d: &mut Network,
    opt: &mut Adam,
    real: &Tensor,
    fake: &Tensor,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Option<f64>)> {
    let out_r = d.forward(real);
    let out_f = d.forward(fake);
    let l = adversarial_loss(config.adversarial_kind(), &scores(&out_r), &scores(&out_f))?;
    d.backward(&score_grad(&l.grad_d_fake, 1.0, &out_f));
    d.backward(&score_grad(&l.grad_d_real, 1.0, &out_r));
    let mut loss = l.loss_d;
    let mut penalty = None;
    if config.use_wgan_gp {
        let lambda = config.loss_weights.gradient_penalty;
        let x = interpolate(real, fake, rng)?;
        let eval = gradient_penalty_at(d, &x, lambda)?;
        accumulate_penalty_grad(d, &eval, lambda, GP_PROBE);
        loss += eval.value;
        penalty = Some(eval.value);
    }
    opt.step(&mut d.body);
    Ok((loss, penalty))
}

/// Runs the critic schedule for one domain and records its components.
#[allow(clippy::too_many_arguments)]
fn critic_updates(
    d: &mut Network,
    opt: &mut Adam,
    real: &Tensor,
    fake: &Tensor,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step: u64,
    name: &str,
    components: &mut BTreeMap<String, f64>,
) -> Result<f64> {
    let rounds = if config.use_wgan_gp { config.n_critic } else { 1 };
    let mut loss = 0.0;
    for _ in 0..rounds {
        let (l, gp) = discriminator_step(d, opt, real, fake, config, rng)?;
        ensure_finite(d, step, name)?;
        loss = l;
        if let Some(gp) = gp {
            // Penalty of the last critic round, summed over discriminators.
            components.insert(format!("gradient_penalty.{name}"), gp);
        }
    }
    components.insert(format!("loss_{name}"), loss);
    Ok(loss)
}

fn sum_penalties(components: &mut BTreeMap<String, f64>) {
    let total: Option<f64> =
        components.iter().filter(|(k, _)| k.starts_with("gradient_penalty.")).map(|(_, v)| *v).reduce(|a, b| a + b);
    if let Some(total) = total {
        components.retain(|k, _| !k.starts_with("gradient_penalty."));
        components.insert("gradient_penalty".into(), total);
    }
}

/// Two generators and two discriminators (CycleGAN and DiscoGAN).
pub(crate) struct DualNets {
    pub g_ab: Network,
    pub g_ba: Network,
    pub d_a: Network,
    pub d_b: Network,
    pub opt_g_ab: Adam,
    pub opt_g_ba: Adam,
    pub opt_d_a: Adam,
    pub opt_d_b: Adam,
}

impl DualNets {
    pub fn step(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        config: &TrainConfig,
        rng: &mut ChaCha8Rng,
        step: u64,
        components: &mut BTreeMap<String, f64>,
    ) -> Result<(f64, f64)> {
        let lambda = config.loss_weights.cycle;
        let fake_b = self.g_ab.forward(a);
        let rec_a = self.g_ba.forward(&fake_b);
        let fake_a = self.g_ba.forward(b);
        let rec_b = self.g_ab.forward(&fake_a);

        let (adv_b, grad_fake_b) = generator_adversarial(&mut self.d_b, &fake_b, b, config, components)?;
        let (adv_a, grad_fake_a) = generator_adversarial(&mut self.d_a, &fake_a, a, config, components)?;
        let cyc_a = cycle_loss(dyn_view(a), dyn_view(&rec_a))?;
        let cyc_b = cycle_loss(dyn_view(b), dyn_view(&rec_b))?;

        // Caches are popped in reverse order of the forward calls above.
        let back_a = self.g_ab.backward(&(to4(cyc_b.grad) * lambda));
        self.g_ba.backward(&(grad_fake_a + back_a));
        let back_b = self.g_ba.backward(&(to4(cyc_a.grad) * lambda));
        self.g_ab.backward(&(grad_fake_b + back_b));
        self.opt_g_ab.step(&mut self.g_ab.body);
        self.opt_g_ba.step(&mut self.g_ba.body);
        ensure_finite(&self.g_ab, step, "g_ab")?;
        ensure_finite(&self.g_ba, step, "g_ba")?;

        let cycle = cyc_a.value + cyc_b.value;
        let fm = components.get("feature_match").copied().unwrap_or(0.0);
        let loss_g = adv_a + adv_b + lambda as f64 * cycle;
        components
            .insert("adv_g".into(), loss_g - lambda as f64 * cycle - config.loss_weights.feature_match as f64 * fm);
        components.insert("cycle".into(), cycle);

        let la = critic_updates(&mut self.d_a, &mut self.opt_d_a, a, &fake_a, config, rng, step, "d_a", components)?;
        let lb = critic_updates(&mut self.d_b, &mut self.opt_d_b, b, &fake_b, config, rng, step, "d_b", components)?;
        sum_penalties(components);
        Ok((la + lb, loss_g))
    }
}

/// Generator, discriminator and siamese embedder (TraVeLGAN).
pub(crate) struct TravelNets {
    pub g: Network,
    pub d: Network,
    pub s: Network,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub opt_s: Adam,
}

impl TravelNets {
    pub fn step(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        config: &TrainConfig,
        rng: &mut ChaCha8Rng,
        step: u64,
        components: &mut BTreeMap<String, f64>,
    ) -> Result<(f64, f64)> {
        let w = &config.loss_weights;
        let fake = self.g.forward(a);
        let (adv, grad_fake) = generator_adversarial(&mut self.d, &fake, b, config, components)?;

        let emb_a = flatten(&self.s.forward(a));
        let emb_f = flatten(&self.s.forward(&fake));
        let travel = travel_loss_embeddings(emb_a.view(), emb_f.view())?;
        let margin = siamese_margin_loss_embeddings(emb_a.view(), w.margin)?;
        let margin_grad = margin.grad.into_dimensionality::<ndarray::Ix2>().expect("2-d");

        let grad_from_s = self.s.backward(&unflatten(travel.grad_translated.mapv(|g| g * w.travel)));
        let grad_a = travel.grad_inputs.mapv(|g| g * w.travel) + margin_grad.mapv(|g| g * w.siamese_margin);
        self.s.backward(&unflatten(grad_a));
        self.g.backward(&(grad_fake + grad_from_s));
        self.opt_g.step(&mut self.g.body);
        self.opt_s.step(&mut self.s.body);
        ensure_finite(&self.g, step, "g")?;
        ensure_finite(&self.s, step, "siamese")?;

        let loss_g = adv + w.travel as f64 * travel.value;
        let fm = components.get("feature_match").copied().unwrap_or(0.0);
        components.insert("adv_g".into(), adv - w.feature_match as f64 * fm);
        components.insert("travel".into(), travel.value);
        components.insert("siamese_margin".into(), margin.value);

        let loss_d = critic_updates(&mut self.d, &mut self.opt_d, b, &fake, config, rng, step, "d", components)?;
        sum_penalties(components);
        Ok((loss_d, loss_g))
    }
}
