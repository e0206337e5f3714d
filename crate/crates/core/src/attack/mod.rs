//! Inversion attacks on a translator and how well they recover identities.

mod itn;
mod scoring;
mod victims;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{save_grid, DomainDataset, ImageBatch};
use crate::error::{Error, Result};
use crate::gan_core::checkpoint::hex_sha256;
use crate::trainers::{train, ArchConfig, TrainConfig, TrainHistory, TrainOptions, TranslationModel};

pub use itn::{itn_attack, InverseNetwork};
pub use scoring::{
    dual_reverse_probe, reconstruction_metrics, reidentification_rate, ImageScore, ReconstructionMetrics,
    Reidentification,
};
pub use victims::AnalyticVictim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Naive,
    Itn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "lowercase")]
pub enum ReconstructionLoss {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub reconstruction_loss: ReconstructionLoss,
    /// Architecture of the inverse network.
    pub inverse: ArchConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mode: AttackMode::Itn,
            epochs: 10,
            batch_size: 4,
            learning_rate: 3e-3,
            seed: 0,
            reconstruction_loss: ReconstructionLoss::L1,
            inverse: ArchConfig { n_res_blocks: 2, ..ArchConfig::default() },
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig("attack epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "attack learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex_sha256(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Train a fresh GAN on the reversed direction (private domain → faces)
/// without any access to the victim; `config.seed` and `config.epochs`
/// override the corresponding fields of `gan`.
pub fn naive_inverse_attack(
    target_domain_data: &DomainDataset,
    face_data: &DomainDataset,
    gan: &TrainConfig,
    config: &AttackConfig,
) -> Result<(TranslationModel, TrainHistory)> {
    config.validate()?;
    let gan = TrainConfig { seed: config.seed, epochs: config.epochs, ..gan.clone() };
    train(target_domain_data, face_data, &gan, &TrainOptions::default())
}

/// Summary of one attack run, with per-image scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub mode: AttackMode,
    pub config_hash: String,
    pub victim_fingerprint: String,
    pub mse: f64,
    pub ssim: f64,
    pub reidentification_rate: f64,
    /// `1 / identities` in the gallery.
    pub chance_rate: f64,
    /// Set when the gallery has a single identity, so the rate is trivially 1.
    pub degenerate: bool,
    pub per_image: Vec<ImageScore>,
}

impl AttackReport {
    pub fn new(
        mode: AttackMode,
        config: &AttackConfig,
        victim_fingerprint: String,
        recon: &ReconstructionMetrics,
        reid: &Reidentification,
        true_ids: &[u32],
    ) -> Self {
        let per_image = recon
            .per_image
            .iter()
            .enumerate()
            .map(|(i, &(mse, ssim))| ImageScore {
                index: i,
                identity: true_ids[i],
                predicted: reid.predictions[i],
                mse,
                ssim,
            })
            .collect();
        AttackReport {
            mode,
            config_hash: config.hash(),
            victim_fingerprint,
            mse: recon.mse,
            ssim: recon.ssim,
            reidentification_rate: reid.rate,
            chance_rate: reid.chance,
            degenerate: reid.degenerate,
            per_image,
        }
    }

    /// `attack_report.json` plus a grid of originals, translations and
    /// reconstructions (first `grid_rows` images).
    pub fn write(
        &self,
        dir: &Path,
        originals: &ImageBatch,
        translated: &ImageBatch,
        reconstructed: &ImageBatch,
        grid_rows: usize,
    ) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("attack_report.json"), serde_json::to_vec_pretty(self)?)?;
        let n = grid_rows.min(originals.len());
        save_grid(
            &[&originals.slice(0, n), &translated.slice(0, n), &reconstructed.slice(0, n)],
            &dir.join("reconstructions.png"),
        )
    }
}
