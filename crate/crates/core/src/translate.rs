//! Deterministic inference through a trained generator and the diagnostics
//! used to judge whether translations keep identities apart.

use std::collections::BTreeMap;

use log::warn;
use ndarray::{concatenate, s, Axis};
use privtranslate_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{augment_identity, AugmentParams, DomainDataset, ImageBatch};
use crate::error::{Error, Result};
use crate::similarity::{pairwise, SimilarityKind, SsimPrepared};
use crate::trainers::TranslationModel;

/// Images per inference call, bounding peak memory.
const CHUNK: usize = 32;

/// Anything mapping NCHW batches in `[-1, 1]` to NCHW batches of the same
/// shape.
pub trait Translator: Sync {
    /// Required square input size, or `None` for size-agnostic maps.
    fn input_size(&self) -> Option<usize>;

    fn translate_tensor(&self, x: &Tensor) -> Tensor;

    /// Inverse direction, when the translator has one.
    fn reverse_tensor(&self, _x: &Tensor) -> Option<Tensor> {
        None
    }

    /// Hash of everything that determines the mapping.
    fn fingerprint(&self) -> String;
}

impl Translator for TranslationModel {
    fn input_size(&self) -> Option<usize> {
        Some(TranslationModel::input_size(self))
    }

    fn translate_tensor(&self, x: &Tensor) -> Tensor {
        self.forward.infer(x)
    }

    fn reverse_tensor(&self, x: &Tensor) -> Option<Tensor> {
        self.reverse.as_ref().map(|r| r.infer(x))
    }

    fn fingerprint(&self) -> String {
        TranslationModel::fingerprint(self)
    }
}

fn check_size(model: &dyn Translator, images: &ImageBatch) -> Result<()> {
    if let Some(size) = model.input_size() {
        if images.height() != size || images.width() != size {
            return Err(Error::ShapeError(format!(
                "model expects {size}×{size} images, got {}×{}",
                images.height(),
                images.width()
            )));
        }
    }
    Ok(())
}

fn run_chunked(images: &ImageBatch, f: impl Fn(&Tensor) -> Tensor) -> Result<ImageBatch> {
    if images.is_empty() {
        return Ok(images.clone());
    }
    let x = images.to_tensor();
    let outs: Vec<Tensor> = (0..images.len())
        .step_by(CHUNK)
        .map(|start| {
            let end = (start + CHUNK).min(images.len());
            f(&x.slice(s![start..end, .., .., ..]).to_owned())
        })
        .collect();
    let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
    let y = concatenate(Axis(0), &views).map_err(|e| Error::ShapeError(e.to_string()))?;
    if y.dim() != x.dim() {
        return Err(Error::ShapeError(format!("translator changed shape {:?} -> {:?}", x.dim(), y.dim())));
    }
    ImageBatch::from_tensor(&y)
}

/// Translate every image once; outputs are clamped into `[-1, 1]`.
pub fn translate(model: &dyn Translator, images: &ImageBatch) -> Result<ImageBatch> {
    check_size(model, images)?;
    run_chunked(images, |x| model.translate_tensor(x))
}

/// Apply the reverse direction.
pub fn translate_reverse(model: &dyn Translator, images: &ImageBatch) -> Result<ImageBatch> {
    check_size(model, images)?;
    if model.reverse_tensor(&images.slice(0, images.len().min(1)).to_tensor()).is_none() {
        return Err(Error::NoReverseGenerator);
    }
    run_chunked(images, |x| model.reverse_tensor(x).expect("checked above"))
}

/// How much more alike translations of one identity are than translations
/// of different identities.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConsistencyReport {
    pub similarity: SimilarityKind,
    /// Mean pairwise similarity among each identity's translations.
    pub per_identity: BTreeMap<u32, f64>,
    /// Mean of `per_identity`.
    pub within_mean: f64,
    /// Mean similarity over all pairs drawn from different identities.
    pub cross_mean: f64,
    /// `within_mean / cross_mean`.
    pub ratio: f64,
    /// Identities left out for having fewer than two images.
    pub skipped: Vec<u32>,
}

enum Prepared {
    Ssim(SsimPrepared),
    Raw(ndarray::Array3<f32>),
}

fn prepare(kind: SimilarityKind, images: &ImageBatch) -> Vec<Prepared> {
    images
        .pixels()
        .outer_iter()
        .map(|img| match kind {
            SimilarityKind::Ssim => Prepared::Ssim(SsimPrepared::new(img)),
            SimilarityKind::NegL2 => Prepared::Raw(img.to_owned()),
        })
        .collect()
}

fn prepared_similarity(a: &Prepared, b: &Prepared) -> f64 {
    match (a, b) {
        (Prepared::Ssim(a), Prepared::Ssim(b)) => ((a.ssim(b) + 1.0) / 2.0).clamp(0.0, 1.0),
        (Prepared::Raw(a), Prepared::Raw(b)) => {
            crate::similarity::similarity(SimilarityKind::NegL2, a.view(), b.view())
        }
        _ => unreachable!("one kind per report"),
    }
}

/// Within- and cross-identity similarity of the translated dataset.
pub fn consistency_report(
    model: &dyn Translator,
    dataset: &DomainDataset,
    kind: SimilarityKind,
) -> Result<ConsistencyReport> {
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    for id in dataset.identities() {
        let idx = dataset.indices_of(id);
        if idx.len() < 2 {
            warn!("identity {id} has {} image(s); skipped in consistency report", idx.len());
            skipped.push(id);
        } else {
            groups.push((id, idx));
        }
    }
    if groups.len() < 2 {
        return Err(Error::TooFewSamples(format!(
            "consistency needs two identities with at least two images, found {}",
            groups.len()
        )));
    }
    let translated = translate(model, &dataset.images)?;
    let prepared = prepare(kind, &translated);

    let mut per_identity = BTreeMap::new();
    for (id, idx) in &groups {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                total += prepared_similarity(&prepared[i], &prepared[j]);
                pairs += 1;
            }
        }
        per_identity.insert(*id, total / pairs as f64);
    }
    let within_mean = per_identity.values().sum::<f64>() / per_identity.len() as f64;

    let mut cross = 0.0;
    let mut cross_pairs = 0usize;
    for (g, (_, a_idx)) in groups.iter().enumerate() {
        for (_, b_idx) in &groups[g + 1..] {
            for &i in a_idx {
                for &j in b_idx {
                    cross += prepared_similarity(&prepared[i], &prepared[j]);
                    cross_pairs += 1;
                }
            }
        }
    }
    let cross_mean = cross / cross_pairs as f64;
    Ok(ConsistencyReport {
        similarity: kind,
        per_identity,
        within_mean,
        cross_mean,
        ratio: within_mean / cross_mean.max(f64::MIN_POSITIVE),
        skipped,
    })
}

/// Mean SSIM similarity (in `[0, 1]`) between `translate(x)` and
/// `translate(augment(x))`.
pub fn perturbation_stability(model: &dyn Translator, images: &ImageBatch, params: &AugmentParams) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::TooFewSamples("no images to perturb".into()));
    }
    let perturbed = augment_identity(images, params, 1)?;
    let a = translate(model, images)?;
    let b = translate(model, &perturbed)?;
    let scores = pairwise(SimilarityKind::Ssim, &a, &b)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
