use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::authclass::Backbone;
use crate::data::{DomainDataset, ImageBatch};
use crate::error::{Error, Result};
use crate::similarity::{mse, SsimPrepared};
use crate::translate::{translate, translate_reverse, Translator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub mse: f64,
    /// Raw SSIM in `[-1, 1]`.
    pub ssim: f64,
    /// `(mse, ssim)` per image.
    pub per_image: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub index: usize,
    pub identity: u32,
    pub predicted: u32,
    pub mse: f64,
    pub ssim: f64,
}

/// Per-image MSE and SSIM, then their means.
pub fn reconstruction_metrics(originals: &ImageBatch, reconstructed: &ImageBatch) -> Result<ReconstructionMetrics> {
    if originals.pixels().dim() != reconstructed.pixels().dim() {
        return Err(Error::ShapeError(format!("{:?} vs {:?}", originals.pixels().dim(), reconstructed.pixels().dim())));
    }
    let per_image: Vec<(f64, f64)> = originals
        .pixels()
        .outer_iter()
        .zip(reconstructed.pixels().outer_iter())
        .map(|(a, b)| (mse(a, b), SsimPrepared::new(a).ssim(&SsimPrepared::new(b))))
        .collect();
    let n = per_image.len().max(1) as f64;
    Ok(ReconstructionMetrics {
        mse: per_image.iter().map(|p| p.0).sum::<f64>() / n,
        ssim: per_image.iter().map(|p| p.1).sum::<f64>() / n,
        per_image,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reidentification {
    pub rate: f64,
    pub predictions: Vec<u32>,
    pub chance: f64,
    pub degenerate: bool,
}

fn l2_normalize(mut m: Array2<f32>) -> Array2<f32> {
    for mut row in m.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
    m
}

/// Match every reconstruction to the identity of its most cosine-similar
/// gallery image in backbone feature space; the rate is the fraction that
/// matches `true_ids`.
pub fn reidentification_rate(
    reconstructed: &ImageBatch,
    gallery: &DomainDataset,
    true_ids: &[u32],
    backbone: &Backbone,
) -> Result<Reidentification> {
    let ids = match &gallery.identity_ids {
        Some(ids) if !gallery.is_empty() => ids,
        _ => return Err(Error::EmptyGallery),
    };
    if true_ids.len() != reconstructed.len() {
        return Err(Error::ShapeError(format!("{} ids for {} reconstructions", true_ids.len(), reconstructed.len())));
    }
    let identities = gallery.identities().len();
    let g = l2_normalize(backbone.features(&gallery.images)?);
    let r = l2_normalize(backbone.features(reconstructed)?);
    let sims = r.dot(&g.t());
    let predictions: Vec<u32> = sims
        .axis_iter(Axis(0))
        .map(|row| {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (j, &s)| if s > acc.1 { (j, s) } else { acc });
            ids[best.0]
        })
        .collect();
    let hits = predictions.iter().zip(true_ids).filter(|(p, t)| p == t).count();
    Ok(Reidentification {
        rate: if predictions.is_empty() { 0.0 } else { hits as f64 / predictions.len() as f64 },
        predictions,
        chance: 1.0 / identities as f64,
        degenerate: identities < 2,
    })
}

/// Round trip `reverse(forward(x))` against `x`.
pub fn dual_reverse_probe(model: &dyn Translator, faces: &ImageBatch) -> Result<ReconstructionMetrics> {
    let forward = translate(model, faces)?;
    let back = translate_reverse(model, &forward)?;
    reconstruction_metrics(faces, &back)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AnalyticVictim;
    use ndarray::Array4;

    #[test]
    fn opposite_constants() {
        let a = ImageBatch::new(Array4::from_elem((2, 8, 8, 3), -1.0)).unwrap();
        let b = ImageBatch::new(Array4::from_elem((2, 8, 8, 3), 1.0)).unwrap();
        assert_eq!(reconstruction_metrics(&a, &b).unwrap().mse, 4.0);
        let same = reconstruction_metrics(&a, &a).unwrap();
        assert_eq!((same.mse, same.ssim), (0.0, 1.0));
        assert!(matches!(
            reconstruction_metrics(&a, &ImageBatch::new(Array4::zeros((1, 8, 8, 3))).unwrap()),
            Err(Error::ShapeError(_))
        ));
    }

    /// Per-pixel oracle on a hand-built 4×4 pair; the 4×4 SSIM window is 3×3.
    #[test]
    fn four_by_four_oracle() {
        let a = Array4::from_shape_fn((1, 4, 4, 3), |(_, y, x, c)| {
            ((y * 4 + x) as f32 / 8.0 - 1.0) * if c == 1 { -1.0 } else { 1.0 }
        });
        let b = Array4::from_shape_fn((1, 4, 4, 3), |(_, y, x, c)| {
            ((x * 4 + y) as f32 / 10.0 - 0.7 + c as f32 * 0.05).clamp(-1.0, 1.0)
        });
        let m =
            reconstruction_metrics(&ImageBatch::new(a.clone()).unwrap(), &ImageBatch::new(b.clone()).unwrap()).unwrap();
        let mut sq = 0.0;
        for v in a.iter().zip(b.iter()) {
            sq += (*v.0 as f64 - *v.1 as f64).powi(2);
        }
        assert!((m.mse - sq / 48.0).abs() < 1e-12);
        let g: Vec<f64> = {
            let raw: Vec<f64> = (0..3).map(|i| (-((i as f64 - 1.0).powi(2)) / 4.5).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        };
        let (c1, c2) = (0.0004, 0.0036);
        let plane = |t: &Array4<f32>, c: usize| t.slice(ndarray::s![0, .., .., c]).to_owned();
        let mut total = 0.0;
        for c in 0..3 {
            let (pa, pb) = (plane(&a, c), plane(&b, c));
            let mut acc = 0.0;
            for y in 0..2 {
                for x in 0..2 {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..3 {
                        for j in 0..3 {
                            let w = g[i] * g[j];
                            let (p, q) = (pa[[y + i, x + j]] as f64, pb[[y + i, x + j]] as f64);
                            ma += w * p;
                            mb += w * q;
                            saa += w * p * p;
                            sbb += w * q * q;
                            sab += w * p * q;
                        }
                    }
                    acc += ((2.0 * ma * mb + c1) * (2.0 * (sab - ma * mb) + c2))
                        / ((ma * ma + mb * mb + c1) * ((saa - ma * ma) + (sbb - mb * mb) + c2));
                }
            }
            total += acc / 4.0;
        }
        assert!((m.ssim - total / 3.0).abs() < 1e-9);
    }

    #[test]
    fn identity_round_trip_and_missing_reverse() {
        let faces = crate::data::synth_identity_dataset(1, 3, 8, "faceoid", 1).unwrap().images;
        assert_eq!(dual_reverse_probe(&AnalyticVictim::Identity, &faces).unwrap().mse, 0.0);
        let spec = crate::gan_core::NetworkSpec::new(crate::gan_core::NetworkKind::Generator, 8, 2, 1, 0);
        let model = crate::trainers::TranslationModel {
            forward: crate::gan_core::build_network(&spec).unwrap(),
            reverse: None,
            framework: crate::trainers::Framework::TravelGan,
            source_domain: "faceoid".into(),
            target_domain: "flowroid".into(),
            config_hash: String::new(),
            seed: 0,
        };
        assert!(matches!(dual_reverse_probe(&model, &faces), Err(Error::NoReverseGenerator)));
    }
}
