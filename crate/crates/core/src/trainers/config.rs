use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan_core::checkpoint::hex_sha256;
use crate::gan_core::{AdversarialKind, LossWeights, NetworkKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    CycleGan,
    DiscoGan,
    TravelGan,
}

impl Framework {
    /// Whether the framework trains a second, reverse generator.
    pub fn has_reverse(self) -> bool {
        !matches!(self, Framework::TravelGan)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Framework::CycleGan => "cyclegan",
            Framework::DiscoGan => "discogan",
            Framework::TravelGan => "travelgan",
        }
    }
}

impl std::str::FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclegan" => Ok(Framework::CycleGan),
            "discogan" => Ok(Framework::DiscoGan),
            "travelgan" => Ok(Framework::TravelGan),
            other => Err(Error::InvalidConfig(format!("unknown framework `{other}`"))),
        }
    }
}

/// Capacity of one network family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub base_channels: usize,
    pub n_down_blocks: usize,
    pub n_res_blocks: usize,
    pub max_channels: usize,
    pub latent_size: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { base_channels: 8, n_down_blocks: 2, n_res_blocks: 2, max_channels: 32, latent_size: 128 }
    }
}

impl ArchConfig {
    pub fn spec(&self, kind: NetworkKind, input_size: usize, spectral_norm: bool, seed: u64) -> NetworkSpec {
        NetworkSpec {
            kind,
            input_size,
            base_channels: self.base_channels,
            n_down_blocks: self.n_down_blocks,
            use_spectral_norm: spectral_norm,
            seed,
            n_res_blocks: self.n_res_blocks,
            latent_size: self.latent_size,
            max_channels: self.max_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub framework: Framework,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Discriminator learning rate; `None` uses `learning_rate`.
    pub d_learning_rate: Option<f32>,
    pub beta1: f32,
    pub beta2: f32,
    pub loss_weights: LossWeights,
    pub use_lsgan: bool,
    pub use_wgan_gp: bool,
    pub use_spectral_norm: bool,
    pub use_feature_matching: bool,
    /// Critic updates per generator update under WGAN-GP.
    pub n_critic: usize,
    pub seed: u64,
    /// Checkpoint cadence in epochs.
    pub checkpoint_every: usize,
    pub generator: ArchConfig,
    pub discriminator: ArchConfig,
    pub siamese: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            framework: Framework::TravelGan,
            epochs: 30,
            batch_size: 8,
            learning_rate: 2e-4,
            d_learning_rate: None,
            beta1: 0.5,
            beta2: 0.999,
            loss_weights: LossWeights::default(),
            use_lsgan: false,
            use_wgan_gp: false,
            use_spectral_norm: false,
            use_feature_matching: false,
            n_critic: 5,
            seed: 0,
            checkpoint_every: 1,
            generator: ArchConfig::default(),
            discriminator: ArchConfig { n_res_blocks: 0, ..ArchConfig::default() },
            siamese: ArchConfig { n_res_blocks: 0, n_down_blocks: 3, ..ArchConfig::default() },
        }
    }
}

fn positive(name: &str, v: f32) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if self.use_lsgan && self.use_wgan_gp {
            return Err(Error::InvalidConfig("use_lsgan and use_wgan_gp are mutually exclusive".into()));
        }
        positive("learning_rate", self.learning_rate)?;
        if let Some(lr) = self.d_learning_rate {
            positive("d_learning_rate", lr)?;
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.n_critic < 1 {
            return Err(Error::InvalidConfig("n_critic must be at least 1".into()));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::InvalidConfig("checkpoint_every must be at least 1".into()));
        }
        self.loss_weights.validate()?;
        for (name, arch) in
            [("generator", &self.generator), ("discriminator", &self.discriminator), ("siamese", &self.siamese)]
        {
            if arch.base_channels < 1 || arch.n_down_blocks < 1 || arch.max_channels < arch.base_channels {
                return Err(Error::InvalidConfig(format!("{name}: invalid channel or depth settings")));
            }
            if arch.latent_size < 1 {
                return Err(Error::InvalidConfig(format!("{name}: latent_size must be positive")));
            }
        }
        Ok(())
    }

    pub fn adversarial_kind(&self) -> AdversarialKind {
        if self.use_wgan_gp {
            AdversarialKind::Wasserstein
        } else if self.use_lsgan {
            AdversarialKind::LeastSquares
        } else {
            AdversarialKind::Minimax
        }
    }

    pub fn d_lr(&self) -> f32 {
        self.d_learning_rate.unwrap_or(self.learning_rate)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex_sha256(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.learning_rate, 2e-4);
        assert_eq!(c.beta1, 0.5);
        assert_eq!(c.adversarial_kind(), AdversarialKind::Minimax);
    }

    #[test]
    fn exclusivity_and_bounds() {
        let c = TrainConfig { use_lsgan: true, use_wgan_gp: true, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let c = TrainConfig { epochs: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { beta1: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_hash() {
        let c = TrainConfig { framework: Framework::DiscoGan, seed: 3, ..Default::default() };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"discogan\""));
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(TrainConfig { seed: 4, ..c.clone() }.hash(), c.hash());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochz": 3}"#).is_err());
    }
}
