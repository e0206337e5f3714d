use ndarray::{Array2, Axis};
use privtranslate_nn::{Adam, Layer, Linear, Module, Sequential, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::{BackboneMode, ClassifierConfig};
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::gan_core::{flatten, unflatten};
use crate::seeds::mix_seed;

/// A binary classifier: backbone (fine-tuned copy in trainable mode) plus a
/// small sigmoid head.
pub struct ClassifierModel {
    pub backbone: Backbone,
    head: Sequential,
    pub mode: BackboneMode,
    pub threshold: f64,
}

impl std::fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("mode", &self.mode)
            .field("threshold", &self.threshold)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accept: bool,
    pub probability: f64,
}

/// The acceptance rule: `p ≥ threshold`.
pub fn accepts(probability: f64, threshold: f64) -> bool {
    probability >= threshold
}

fn sigmoid(z: f32) -> f64 {
    1.0 / (1.0 + (-(z as f64)).exp())
}

impl ClassifierModel {
    fn head_probabilities(&self, features: &Array2<f32>) -> Vec<f64> {
        if features.nrows() == 0 {
            return Vec::new();
        }
        flatten(&self.head.infer(&unflatten(features.clone()))).column(0).iter().map(|&z| sigmoid(z)).collect()
    }

    pub(crate) fn probabilities_from_features(&self, features: &Array2<f32>) -> Vec<f64> {
        self.head_probabilities(features)
    }

    pub fn probabilities(&self, images: &ImageBatch) -> Result<Vec<f64>> {
        Ok(self.head_probabilities(&self.backbone.features(images)?))
    }

    pub fn head_fingerprint(&self) -> String {
        self.head.parameters().fingerprint()
    }
}

/// Accept/reject every image.
pub fn decide(classifier: &ClassifierModel, images: &ImageBatch) -> Result<Vec<Decision>> {
    Ok(classifier
        .probabilities(images)?
        .into_iter()
        .map(|p| Decision { accept: accepts(p, classifier.threshold), probability: p })
        .collect())
}

fn build_head(inputs: usize, hidden: usize, seed: u64) -> Sequential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Sequential::new(vec![
        Layer::Linear(Linear::new(inputs, hidden, &mut rng)),
        Layer::leaky_relu(0.2),
        Layer::Linear(Linear::new(hidden, 1, &mut rng)),
    ])
}

/// Training inputs: precomputed features (frozen backbone) or images.
pub(crate) enum Samples<'a> {
    Features(&'a Array2<f32>),
    Images(&'a ImageBatch),
}

impl Samples<'_> {
    fn len(&self) -> usize {
        match self {
            Samples::Features(f) => f.nrows(),
            Samples::Images(i) => i.len(),
        }
    }
}

enum Inputs {
    Features(Array2<f32>, Array2<f32>),
    Images(Tensor, Tensor),
}

/// Class-weighted BCE on logits: weight `w` per sample, mean over the batch.
fn weighted_bce(logits: &Array2<f32>, targets: &[f32], weights: &[f32]) -> (f64, Array2<f32>) {
    let n = targets.len() as f32;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0f64;
    for (i, (&y, &w)) in targets.iter().zip(weights).enumerate() {
        let z = logits[[i, 0]] as f64;
        // log(1 + e^{-|z|}) + max(z, 0) − y·z
        loss += w as f64 * ((-z.abs()).exp().ln_1p() + z.max(0.0) - y as f64 * z);
        grad[[i, 0]] = w * (sigmoid(z as f32) as f32 - y) / n;
    }
    (loss / n as f64, grad)
}

pub(crate) fn train_on(
    backbone: &Backbone,
    positives: Samples,
    negatives: Samples,
    config: &ClassifierConfig,
) -> Result<ClassifierModel> {
    config.validate()?;
    if positives.len() == 0 {
        return Err(Error::EmptyClass("positives"));
    }
    if negatives.len() == 0 {
        return Err(Error::EmptyClass("negatives"));
    }
    let mut head = build_head(backbone.embedding_dim(), config.hidden, mix_seed(config.seed, &[1]));
    let mut net = backbone.net.clone();
    let mut opt_head = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut opt_net = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[2]));
    let (np, nn) = (positives.len(), negatives.len());
    let per_epoch_neg = (config.negatives_per_positive * np).min(nn);
    // Class-balanced weights: both classes carry half of the total loss.
    let total = (np + per_epoch_neg) as f32;
    let (w_pos, w_neg) = (total / (2.0 * np as f32), total / (2.0 * per_epoch_neg as f32));
    let trainable = config.backbone_mode == BackboneMode::Trainable;
    let features = |s: &Samples| -> Result<Array2<f32>> {
        match s {
            Samples::Features(f) => Ok((*f).clone()),
            Samples::Images(i) => backbone.features(i),
        }
    };
    let inputs = match (&positives, &negatives) {
        (Samples::Images(p), Samples::Images(n)) if trainable => Inputs::Images(p.to_tensor(), n.to_tensor()),
        _ if trainable => return Err(Error::InvalidArgument("trainable mode needs images, not features".into())),
        // A frozen backbone only needs features once.
        _ => Inputs::Features(features(&positives)?, features(&negatives)?),
    };

    let mut neg_order: Vec<usize> = (0..nn).collect();
    for _ in 0..config.epochs {
        neg_order.shuffle(&mut rng);
        // (is_positive, index)
        let mut items: Vec<(bool, usize)> = (0..np).map(|i| (true, i)).collect();
        items.extend(neg_order[..per_epoch_neg].iter().map(|&i| (false, i)));
        items.shuffle(&mut rng);
        for batch in items.chunks(config.batch_size) {
            let targets: Vec<f32> = batch.iter().map(|(p, _)| if *p { 1.0 } else { 0.0 }).collect();
            let weights: Vec<f32> = batch.iter().map(|(p, _)| if *p { w_pos } else { w_neg }).collect();
            let emb: Tensor = match &inputs {
                Inputs::Images(pt, nt) => {
                    let views: Vec<_> = batch
                        .iter()
                        .map(|&(p, i)| if p { pt.index_axis(Axis(0), i) } else { nt.index_axis(Axis(0), i) })
                        .collect();
                    net.forward(&ndarray::stack(Axis(0), &views).expect("equal shapes"))
                }
                Inputs::Features(pf, nf) => {
                    let rows: Vec<_> = batch.iter().map(|&(p, i)| if p { pf.row(i) } else { nf.row(i) }).collect();
                    unflatten(ndarray::stack(Axis(0), &rows).expect("equal widths"))
                }
            };
            let logits = head.forward(&emb);
            let (_, grad) = weighted_bce(&flatten(&logits), &targets, &weights);
            let g_emb = head.backward(&unflatten(grad));
            opt_head.step(&mut head);
            if trainable {
                net.backward(&g_emb);
                opt_net.step(&mut net.body);
            }
        }
    }
    let mut out_backbone = backbone.clone();
    if trainable {
        if !net.all_finite() {
            return Err(Error::NonFinite { step: opt_net.steps() as u64, network: "classifier backbone".into() });
        }
        out_backbone.net = net;
    }
    Ok(ClassifierModel { backbone: out_backbone, head, mode: config.backbone_mode, threshold: config.threshold })
}

/// Train a sigmoid head (and, in trainable mode, the backbone) to separate
/// `positives` from `negatives` with class-balanced cross-entropy. Each epoch
/// sees every positive and `negatives_per_positive` times as many negatives
/// drawn without replacement.
pub fn train_binary(
    backbone: &Backbone,
    positives: &ImageBatch,
    negatives: &ImageBatch,
    config: &ClassifierConfig,
) -> Result<ClassifierModel> {
    if !positives.is_empty() {
        backbone.check(positives)?;
    }
    if !negatives.is_empty() {
        backbone.check(negatives)?;
    }
    train_on(backbone, Samples::Images(positives), Samples::Images(negatives), config)
}
