use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::classifier::{decide, train_binary, ClassifierModel, Decision};
use super::ClassifierConfig;
use crate::data::{augment_identity, AugmentParams, ImageBatch};
use crate::error::{Error, Result};
use crate::translate::{translate, Translator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrollConfig {
    pub augment: AugmentParams,
    /// Augmented copies per enrollment image.
    pub copies: usize,
    pub classifier: ClassifierConfig,
}

impl Default for EnrollConfig {
    fn default() -> Self {
        EnrollConfig {
            augment: AugmentParams {
                max_rotation_deg: 10.0,
                hue_shift_range: 0.02,
                zoom_range: 0.08,
                ..Default::default()
            },
            copies: 3,
            classifier: ClassifierConfig::default(),
        }
    }
}

/// Augment the user's faces, translate them and the (face) negative pool,
/// and train the user's classifier on translations only.
pub fn enroll(
    user_images: &ImageBatch,
    model: &dyn Translator,
    backbone: &Backbone,
    negative_pool: &ImageBatch,
    config: &EnrollConfig,
) -> Result<ClassifierModel> {
    if user_images.is_empty() {
        return Err(Error::EmptyClass("positives"));
    }
    let augmented = augment_identity(user_images, &config.augment, config.copies)?;
    let positives = translate(model, &augmented)?;
    let negatives = translate(model, negative_pool)?;
    train_binary(backbone, &positives, &negatives, &config.classifier)
}

/// Translate a probe face and let the user's classifier decide.
pub fn authenticate(
    images: &ImageBatch,
    model: &dyn Translator,
    classifier: &ClassifierModel,
) -> Result<Vec<Decision>> {
    decide(classifier, &translate(model, images)?)
}
