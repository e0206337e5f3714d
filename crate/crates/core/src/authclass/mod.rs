//! Per-identity binary authentication classifiers over (translated) images,
//! with a frozen or trainable pretrained backbone, k-fold evaluation and an
//! enrollment facade.

mod backbone;
mod classifier;
mod crossval;
mod facade;
mod metrics;
mod report;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backbone::{load_backbone, pretrain_backbone, save_backbone, Backbone, BackboneConfig, BackboneProvenance};
pub use classifier::{accepts, decide, train_binary, ClassifierModel, Decision};
pub use crossval::crossval_experiment;
pub use facade::{authenticate, enroll, EnrollConfig};
pub use metrics::{
    compute_metrics, performance_drop, Confusion, FoldScores, IdentityScores, Metric, Metrics, MetricsReport,
    PerformanceDrop,
};
pub use report::{write_scores_csv, AuthTable, AuthTableRow, REFERENCE_SCORES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "lowercase")]
pub enum BackboneMode {
    Frozen,
    Trainable,
}

impl BackboneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneMode::Frozen => "frozen",
            BackboneMode::Trainable => "trainable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub backbone_mode: BackboneMode,
    pub epochs: usize,
    /// Acceptance threshold on the sigmoid output; `p ≥ threshold` accepts.
    pub threshold: f64,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Width of the hidden layer of the classification head.
    pub hidden: usize,
    /// Training negatives drawn per positive in each epoch.
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            backbone_mode: BackboneMode::Trainable,
            epochs: 15,
            threshold: 0.7,
            learning_rate: 3e-3,
            batch_size: 4,
            hidden: 32,
            negatives_per_positive: 4,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 1 || self.hidden < 1 || self.negatives_per_positive < 1 {
            return bad("batch_size, hidden and negatives_per_positive must be at least 1".into());
        }
        Ok(())
    }
}
