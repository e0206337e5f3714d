use ndarray::{Axis, Ix4};
use privtranslate_nn::{Adam, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttackConfig, ReconstructionLoss};
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::gan_core::{build_network, cycle_loss, mse_loss, Network, NetworkKind};
use crate::seeds::mix_seed;
use crate::translate::{translate, Translator};

/// Inverse transformation network `F ≈ G⁻¹` learned from `(G(x), x)` pairs.
#[derive(Debug, Clone)]
pub struct InverseNetwork {
    pub net: Network,
    /// Mean training reconstruction loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub victim_fingerprint: String,
}

impl Translator for InverseNetwork {
    fn input_size(&self) -> Option<usize> {
        Some(self.net.spec.input_size)
    }

    fn translate_tensor(&self, x: &Tensor) -> Tensor {
        self.net.infer(x)
    }

    fn fingerprint(&self) -> String {
        self.net.fingerprint()
    }
}

/// Freeze `victim`, generate pairs `(victim(x), x)` from the attacker's
/// `faces`, and train an inverse network on them. The victim's fingerprint
/// is compared before and after; any change is a
/// [`Error::FrozenViolation`].
pub fn itn_attack(victim: &dyn Translator, faces: &ImageBatch, config: &AttackConfig) -> Result<InverseNetwork> {
    config.validate()?;
    if faces.is_empty() {
        return Err(Error::TooFewSamples("attack needs face images".into()));
    }
    if faces.height() != faces.width() {
        return Err(Error::ShapeError("attack images must be square".into()));
    }
    let before = victim.fingerprint();
    let translated = translate(victim, faces)?;
    let size = faces.height();
    let mut net = build_network(&config.inverse.spec(NetworkKind::Inverse, size, false, mix_seed(config.seed, &[1])))?;
    let mut opt = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[2]));
    let (x_all, y_all) = (faces.to_tensor(), translated.to_tensor());
    let mut order: Vec<usize> = (0..faces.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = x_all.select(Axis(0), chunk);
            let y = y_all.select(Axis(0), chunk);
            let pred = net.forward(&y);
            let loss = match config.reconstruction_loss {
                ReconstructionLoss::L1 => cycle_loss(x.view().into_dyn(), pred.view().into_dyn())?,
                ReconstructionLoss::L2 => mse_loss(x.view().into_dyn(), pred.view().into_dyn())?,
            };
            total += loss.value * chunk.len() as f64;
            net.backward(&loss.grad.into_dimensionality::<Ix4>().expect("4-d gradient"));
            opt.step(&mut net.body);
        }
        if !net.all_finite() {
            return Err(Error::NonFinite { step: opt.steps() as u64, network: "inverse".into() });
        }
        let mean = total / faces.len() as f64;
        log::info!("itn epoch {epoch}: reconstruction loss {mean:.5}");
        epoch_losses.push(mean);
    }
    let after = victim.fingerprint();
    if before != after {
        return Err(Error::FrozenViolation { before, after });
    }
    Ok(InverseNetwork { net, epoch_losses, victim_fingerprint: before })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU64, Ordering};

    /// Reports a different fingerprint on every call, as a victim whose
    /// weights were updated would.
    struct Drifting(AtomicU64);

    impl Translator for Drifting {
        fn input_size(&self) -> Option<usize> {
            None
        }
        fn translate_tensor(&self, x: &Tensor) -> Tensor {
            x.clone()
        }
        fn fingerprint(&self) -> String {
            self.0.fetch_add(1, Ordering::SeqCst).to_string()
        }
    }

    #[test]
    fn mutated_victim_is_detected() {
        let faces = crate::data::synth_identity_dataset(1, 2, 8, "faceoid", 1).unwrap().images;
        let cfg = AttackConfig {
            epochs: 1,
            inverse: crate::trainers::ArchConfig { n_down_blocks: 1, n_res_blocks: 0, ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(itn_attack(&Drifting(AtomicU64::new(0)), &faces, &cfg), Err(Error::FrozenViolation { .. })));
    }
}
