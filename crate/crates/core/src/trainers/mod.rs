//! CycleGAN, DiscoGAN and TraVeLGAN training loops over two unpaired domains.

mod config;
mod history;
mod model;
mod steps;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Axis;
use privtranslate_nn::{Adam, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ArchConfig, Framework, TrainConfig};
pub use history::{detect_mode_collapse, CollapseVerdict, LossRegistry, StepRecord, TrainHistory};
pub use model::{load_model, save_model, TranslationModel};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::gan_core::{build_network, Network, NetworkKind};
use crate::seeds::mix_seed;
use steps::{Batcher, DualNets, TravelNets};

/// Optional side outputs of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Receives `last/` and `best/` checkpoints every `checkpoint_every` epochs.
    pub checkpoint_dir: Option<PathBuf>,
}

pub fn train_cyclegan(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<(TranslationModel, TrainHistory)> {
    let config = TrainConfig { framework: Framework::CycleGan, ..config.clone() };
    train(source, target, &config, &TrainOptions::default())
}

pub fn train_discogan(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<(TranslationModel, TrainHistory)> {
    let config = TrainConfig { framework: Framework::DiscoGan, ..config.clone() };
    train(source, target, &config, &TrainOptions::default())
}

pub fn train_travelgan(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
) -> Result<(TranslationModel, TrainHistory)> {
    let config = TrainConfig { framework: Framework::TravelGan, ..config.clone() };
    train(source, target, &config, &TrainOptions::default())
}

enum Nets {
    Dual(DualNets),
    Travel(TravelNets),
}

/// Steps per epoch: enough batches to visit the larger domain once.
pub fn steps_per_epoch(source_len: usize, target_len: usize, batch_size: usize) -> usize {
    source_len.max(target_len).div_ceil(batch_size)
}

/// Train the framework selected by `config.framework`.
pub fn train(
    source: &DomainDataset,
    target: &DomainDataset,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<(TranslationModel, TrainHistory)> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::TooFewSamples("both domains need at least one image".into()));
    }
    if !source.images.same_geometry(&target.images) {
        return Err(Error::ShapeError(format!(
            "source images are {}×{}, target images {}×{}",
            source.images.height(),
            source.images.width(),
            target.images.height(),
            target.images.width()
        )));
    }
    let size = source.images.height();
    if source.images.width() != size {
        return Err(Error::ShapeError("images must be square".into()));
    }

    let seed = config.seed;
    let sn = config.use_spectral_norm;
    let gen = |k: u64| build_network(&config.generator.spec(NetworkKind::Generator, size, false, mix_seed(seed, &[k])));
    let disc =
        |k: u64| build_network(&config.discriminator.spec(NetworkKind::Discriminator, size, sn, mix_seed(seed, &[k])));
    let adam = || Adam::new(config.learning_rate, config.beta1, config.beta2);
    let adam_d = || Adam::new(config.d_lr(), config.beta1, config.beta2);
    let mut nets = match config.framework {
        Framework::CycleGan | Framework::DiscoGan => Nets::Dual(DualNets {
            g_ab: gen(1)?,
            g_ba: gen(2)?,
            d_a: disc(3)?,
            d_b: disc(4)?,
            opt_g_ab: adam(),
            opt_g_ba: adam(),
            opt_d_a: adam_d(),
            opt_d_b: adam_d(),
        }),
        Framework::TravelGan => Nets::Travel(TravelNets {
            g: gen(1)?,
            d: disc(4)?,
            s: build_network(&config.siamese.spec(NetworkKind::Siamese, size, false, mix_seed(seed, &[5])))?,
            opt_g: adam(),
            opt_d: adam_d(),
            opt_s: adam(),
        }),
    };

    let data_a = source.images.to_tensor();
    let data_b = target.images.to_tensor();
    let mut batch_a = Batcher::new(source.len(), mix_seed(seed, &[6, 0]));
    let mut batch_b = Batcher::new(target.len(), mix_seed(seed, &[6, 1]));
    let mut gp_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[7]));
    let steps = steps_per_epoch(source.len(), target.len(), config.batch_size);

    let mut history = TrainHistory::default();
    let mut best_loss_g = f64::INFINITY;
    let mut step: u64 = 0;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        for _ in 0..steps {
            step += 1;
            let a: Tensor = data_a.select(Axis(0), &batch_a.next(config.batch_size));
            let b: Tensor = data_b.select(Axis(0), &batch_b.next(config.batch_size));
            let mut components = BTreeMap::new();
            let (loss_d, loss_g) = match &mut nets {
                Nets::Dual(n) => n.step(&a, &b, config, &mut gp_rng, step, &mut components)?,
                Nets::Travel(n) => n.step(&a, &b, config, &mut gp_rng, step, &mut components)?,
            };
            if !(loss_d.is_finite() && loss_g.is_finite()) {
                return Err(Error::NonFinite { step, network: "loss".into() });
            }
            history.push(StepRecord { step, epoch, loss_d, loss_g, components });
        }
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        let mean_g = history.records.iter().filter(|r| r.epoch == epoch).map(|r| r.loss_g).sum::<f64>() / steps as f64;
        log::info!(
            "{} epoch {}/{}: loss_g {:.4}, {:.1}s",
            config.framework.as_str(),
            epoch + 1,
            config.epochs,
            mean_g,
            history.epoch_seconds[epoch]
        );
        if let Some(dir) = &options.checkpoint_dir {
            if (epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs {
                let model = snapshot(&nets, source, target, config);
                write_checkpoint(&model, &dir.join("last"))?;
                if mean_g < best_loss_g {
                    best_loss_g = mean_g;
                    write_checkpoint(&model, &dir.join("best"))?;
                }
            }
        }
    }
    if config.framework == Framework::TravelGan {
        assert!(!history.registry.contains("cycle"), "travelgan evaluated a cycle loss");
    } else {
        assert!(!history.registry.contains("travel"), "dual trainer evaluated a travel loss");
    }
    Ok((snapshot(&nets, source, target, config), history))
}

fn write_checkpoint(model: &TranslationModel, dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    save_model(model, dir)
}

fn snapshot(nets: &Nets, source: &DomainDataset, target: &DomainDataset, config: &TrainConfig) -> TranslationModel {
    let (forward, reverse): (Network, Option<Network>) = match nets {
        Nets::Dual(n) => (n.g_ab.clone(), Some(n.g_ba.clone())),
        Nets::Travel(n) => (n.g.clone(), None),
    };
    TranslationModel {
        forward,
        reverse,
        framework: config.framework,
        source_domain: source.domain_tag.clone(),
        target_domain: target.domain_tag.clone(),
        config_hash: config.hash(),
        seed: config.seed,
    }
}
