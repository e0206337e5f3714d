//! Experiment configuration: one JSON document covering every stage.

use std::path::{Path, PathBuf};

use privtranslate::attack::AttackConfig;
use privtranslate::authclass::{BackboneConfig, ClassifierConfig};
use privtranslate::data::{AugmentParams, SynthDomain};
use privtranslate::similarity::SimilarityKind;
use privtranslate::trainers::{ArchConfig, TrainConfig};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// `identities × per_identity` synthetic images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SetSize {
    pub identities: usize,
    pub per_identity: usize,
}

impl SetSize {
    pub fn count(&self) -> usize {
        self.identities * self.per_identity
    }

    fn check(&self, field: &str) -> Result<()> {
        if self.identities < 1 || self.per_identity < 1 {
            return invalid(field, "identities and per_identity must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Source-domain (face) training images for the translator.
    pub faces: SetSize,
    /// Synthetic target domain, `flowroid` by default.
    pub target_domain: String,
    pub target: SetSize,
    /// Image folders used by `ingest` instead of the synthetic domains.
    pub source_dir: Option<PathBuf>,
    pub target_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            faces: SetSize { identities: 20, per_identity: 10 },
            target_domain: "flowroid".into(),
            target: SetSize { identities: 20, per_identity: 10 },
            source_dir: None,
            target_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseConfig {
    pub epsilon: f64,
    pub window: usize,
}

impl Default for CollapseConfig {
    fn default() -> Self {
        CollapseConfig { epsilon: 1e-3, window: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    /// Held-out faces, also the probe and gallery set of the attack.
    pub benchmark: SetSize,
    pub similarity: SimilarityKind,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { benchmark: SetSize { identities: 10, per_identity: 10 }, similarity: SimilarityKind::Ssim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    /// Enrolled users before augmentation.
    pub users: SetSize,
    pub augment: AugmentParams,
    /// Augmented copies per raw image.
    pub copies: usize,
    /// Impostor faces; their translations are the negatives.
    pub pool: SetSize,
    /// Classes per domain (faces and target) of the backbone pretraining task.
    pub aux: SetSize,
    pub backbone: BackboneConfig,
    pub classifier: ClassifierConfig,
    /// Cross-validation folds.
    pub k: usize,
}

impl Default for AuthConfig {
    fn default() -> Self {
        AuthConfig {
            users: SetSize { identities: 10, per_identity: 5 },
            augment: AugmentParams {
                max_rotation_deg: 10.0,
                hue_shift_range: 0.02,
                zoom_range: 0.08,
                ..Default::default()
            },
            copies: 3,
            pool: SetSize { identities: 80, per_identity: 5 },
            aux: SetSize { identities: 80, per_identity: 4 },
            backbone: BackboneConfig::default(),
            classifier: ClassifierConfig::default(),
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AttackStageConfig {
    pub params: AttackConfig,
    /// The attacker's own faces, disjoint from every enrolled identity.
    pub attacker_faces: SetSize,
    /// Rows of the reconstruction grid.
    pub grid_rows: usize,
}

impl Default for AttackStageConfig {
    fn default() -> Self {
        AttackStageConfig {
            params: AttackConfig::default(),
            attacker_faces: SetSize { identities: 50, per_identity: 4 },
            grid_rows: 8,
        }
    }
}

/// Every stage's settings. Seeds inside sections are ignored: all of them
/// are derived from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub seed: u64,
    /// Image side length for every stage.
    pub size: usize,
    pub data: DataConfig,
    pub gan: TrainConfig,
    pub collapse: CollapseConfig,
    pub consistency: ConsistencyConfig,
    pub auth: AuthConfig,
    pub attack: AttackStageConfig,
}

impl Default for ExperimentConfig {
    /// Desk-scale TraVeLGAN experiment on synthetic faceoids and flowroids.
    fn default() -> Self {
        let mut gan = TrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 5e-4,
            d_learning_rate: Some(5e-4),
            use_lsgan: true,
            ..TrainConfig::default()
        };
        gan.loss_weights.travel = 2.0;
        gan.loss_weights.siamese_margin = 1.0;
        gan.discriminator = ArchConfig { base_channels: 16, n_down_blocks: 3, ..gan.discriminator };
        gan.siamese.latent_size = 16;
        ExperimentConfig {
            experiment_id: "desk".into(),
            seed: 7,
            size: 64,
            data: DataConfig::default(),
            gan,
            collapse: CollapseConfig::default(),
            consistency: ConsistencyConfig::default(),
            auth: AuthConfig::default(),
            attack: AttackStageConfig::default(),
        }
    }
}

fn invalid<T>(field: &str, message: impl std::fmt::Display) -> Result<T> {
    Err(CliError::Config(format!("{field}: {message}")))
}

fn within(field: &str, r: privtranslate::Result<()>) -> Result<()> {
    r.map_err(|e| CliError::Config(format!("{field}: {e}")))
}

impl ExperimentConfig {
    /// Every rule the stages would otherwise enforce at run time, reported
    /// with the offending field.
    pub fn validate(&self) -> Result<()> {
        let id_ok = !self.experiment_id.is_empty()
            && self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            && !self.experiment_id.starts_with('.');
        if !id_ok {
            return invalid("experiment_id", "use letters, digits, `-`, `_` or `.`");
        }
        if self.size < 8 {
            return invalid("size", "must be at least 8");
        }
        let depths = [
            ("gan.generator", self.gan.generator.n_down_blocks),
            ("gan.discriminator", self.gan.discriminator.n_down_blocks),
            ("gan.siamese", self.gan.siamese.n_down_blocks),
            ("auth.backbone", self.auth.backbone.n_down_blocks),
            ("attack.params.inverse", self.attack.params.inverse.n_down_blocks),
        ];
        for (field, n) in depths {
            if n < 1 || n >= usize::BITS as usize || !self.size.is_multiple_of(1usize << n) {
                return invalid(
                    &format!("{field}.n_down_blocks"),
                    format!("size {} must be divisible by 2^{n}", self.size),
                );
            }
        }

        self.data.faces.check("data.faces")?;
        self.data.target.check("data.target")?;
        within("data.target_domain", self.data.target_domain.parse::<SynthDomain>().map(|_| ()))?;
        within("gan", self.gan.validate())?;
        if !(self.collapse.epsilon.is_finite() && self.collapse.epsilon > 0.0) {
            return invalid("collapse.epsilon", "must be positive");
        }
        if self.collapse.window < 1 {
            return invalid("collapse.window", "must be at least 1");
        }

        let bench = self.consistency.benchmark;
        if bench.identities < 2 || bench.per_identity < 2 {
            return invalid("consistency.benchmark", "needs at least 2 identities with 2 images each");
        }

        let auth = &self.auth;
        auth.users.check("auth.users")?;
        auth.pool.check("auth.pool")?;
        auth.aux.check("auth.aux")?;
        within("auth.augment", auth.augment.validate())?;
        if auth.copies < 1 {
            return invalid("auth.copies", "must be at least 1");
        }
        let b = &auth.backbone;
        if b.epochs < 1 || b.batch_size < 1 || b.embedding_dim < 1 || b.base_channels < 1 {
            return invalid("auth.backbone", "epochs, batch_size, embedding_dim and base_channels must be at least 1");
        }
        if !(b.learning_rate.is_finite() && b.learning_rate > 0.0) {
            return invalid("auth.backbone.learning_rate", "must be positive");
        }
        within("auth.classifier", auth.classifier.validate())?;
        if auth.k < 2 {
            return invalid("auth.k", "must be at least 2");
        }
        if auth.users.per_identity * auth.copies < auth.k {
            return invalid("auth.k", "exceeds the images per enrolled identity");
        }
        if auth.pool.count() < auth.k {
            return invalid("auth.pool", "needs at least k images");
        }

        within("attack.params", self.attack.params.validate())?;
        self.attack.attacker_faces.check("attack.attacker_faces")?;
        if self.attack.grid_rows < 1 {
            return invalid("attack.grid_rows", "must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn schema() -> Value {
        serde_json::to_value(schemars::schema_for!(ExperimentConfig)).expect("schema serializes")
    }
}

/// Set `path` (dot-separated) in a JSON document. The value is parsed as JSON
/// and falls back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(CliError::Config(format!("{}: not an object", keys[..i].join("."))));
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one key")
}

/// Defaults, then the file at `path`, then `--set` overrides, then
/// validation.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(ExperimentConfig::default())?,
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let config: ExperimentConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut doc = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut doc, "gan.epochs=3").unwrap();
        apply_override(&mut doc, "experiment_id=quick").unwrap();
        apply_override(&mut doc, "attack.params.mode=naive").unwrap();
        let c: ExperimentConfig = serde_json::from_value(doc).unwrap();
        assert_eq!(c.gan.epochs, 3);
        assert_eq!(c.experiment_id, "quick");
        assert_eq!(c.attack.params.mode, privtranslate::attack::AttackMode::Naive);
        let mut doc = serde_json::to_value(ExperimentConfig::default()).unwrap();
        assert!(apply_override(&mut doc, "no-equals-sign").is_err());
        assert!(apply_override(&mut doc, "seed.inner=1").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut doc = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut doc, "gan.epochz=3").unwrap();
        assert!(serde_json::from_value::<ExperimentConfig>(doc).is_err());
    }

    #[test]
    fn schema_lists_every_section() {
        let s = ExperimentConfig::schema().to_string();
        for key in ["experiment_id", "gan", "collapse", "consistency", "auth", "attack", "attacker_faces"] {
            assert!(s.contains(key), "{key} missing from schema");
        }
    }
}
