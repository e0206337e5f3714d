//! Image similarity: SSIM with a Gaussian window and a normalized L2 score.

use ndarray::{Array2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::data::ImageBatch;
use crate::error::{Error, Result};

/// Dynamic range of pixels in `[-1, 1]`.
const RANGE: f64 = 2.0;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const SIGMA: f64 = 1.5;
const MAX_WINDOW: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityKind {
    #[default]
    Ssim,
    NegL2,
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssim" => Ok(SimilarityKind::Ssim),
            "neg-l2" => Ok(SimilarityKind::NegL2),
            other => Err(Error::InvalidArgument(format!("unknown similarity `{other}`"))),
        }
    }
}

/// Largest odd window not exceeding the image or 11.
fn window_size(h: usize, w: usize) -> usize {
    let m = h.min(w).min(MAX_WINDOW);
    if m.is_multiple_of(2) {
        m - 1
    } else {
        m
    }
}

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * SIGMA * SIGMA)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of one plane.
fn filter(plane: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = plane.dim();
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let src = plane.as_slice().expect("standard layout");
    let mut rows = vec![0.0f64; h * wo];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        let out = &mut rows[y * wo..(y + 1) * wo];
        for (x, o) in out.iter_mut().enumerate() {
            *o = line[x..x + n].iter().zip(k).map(|(p, q)| p * q).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((ho, wo));
    for y in 0..ho {
        for (i, &ki) in k.iter().enumerate() {
            let line = &rows[(y + i) * wo..(y + i + 1) * wo];
            for (o, &v) in out.row_mut(y).iter_mut().zip(line) {
                *o += ki * v;
            }
        }
    }
    out
}

/// Per-image filtered statistics, so pairwise SSIM only filters the cross
/// term.
#[derive(Debug, Clone)]
pub struct SsimPrepared {
    window: Vec<f64>,
    /// Per channel: raw plane, local mean, local second moment.
    planes: Vec<(Array2<f64>, Array2<f64>, Array2<f64>)>,
}

impl SsimPrepared {
    pub fn new(img: ArrayView3<f32>) -> Self {
        let (h, w, c) = img.dim();
        let window = gaussian(window_size(h, w));
        let planes = (0..c)
            .map(|ch| {
                let p = img.index_axis(Axis(2), ch).mapv(|v| v as f64);
                let mu = filter(&p, &window);
                let sq = filter(&(&p * &p), &window);
                (p, mu, sq)
            })
            .collect();
        SsimPrepared { window, planes }
    }

    /// Mean SSIM over channels.
    pub fn ssim(&self, other: &SsimPrepared) -> f64 {
        assert_eq!(self.planes.len(), other.planes.len(), "ssim needs equal shapes");
        let c1 = (K1 * RANGE).powi(2);
        let c2 = (K2 * RANGE).powi(2);
        let mut sum = 0.0;
        for ((a, mu_a, aa), (b, mu_b, bb)) in self.planes.iter().zip(&other.planes) {
            assert_eq!(a.dim(), b.dim(), "ssim needs equal shapes");
            let ab = filter(&(a * b), &self.window);
            let mut total = 0.0;
            ndarray::Zip::from(mu_a).and(mu_b).and(aa).and(bb).and(&ab).for_each(|&ma, &mb, &saa, &sbb, &sab| {
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            });
            sum += total / ab.len() as f64;
        }
        sum / self.planes.len() as f64
    }
}

/// Mean SSIM of two `H×W×3` images, averaged over channels; in `[-1, 1]`.
pub fn ssim(a: ArrayView3<f32>, b: ArrayView3<f32>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "ssim needs equal shapes");
    SsimPrepared::new(a).ssim(&SsimPrepared::new(b))
}

pub fn mse(a: ArrayView3<f32>, b: ArrayView3<f32>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "mse needs equal shapes");
    let n = a.len().max(1) as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / n
}

/// Similarity normalized to `[0, 1]`: SSIM as `(s+1)/2`, L2 as `1 − RMSE/2`.
pub fn similarity(kind: SimilarityKind, a: ArrayView3<f32>, b: ArrayView3<f32>) -> f64 {
    let s = match kind {
        SimilarityKind::Ssim => (ssim(a, b) + 1.0) / 2.0,
        SimilarityKind::NegL2 => 1.0 - mse(a, b).sqrt() / RANGE,
    };
    s.clamp(0.0, 1.0)
}

/// Per-image similarity between two parallel batches.
pub fn pairwise(kind: SimilarityKind, a: &ImageBatch, b: &ImageBatch) -> Result<Vec<f64>> {
    if a.pixels().dim() != b.pixels().dim() {
        return Err(Error::ShapeError(format!("{:?} vs {:?}", a.pixels().dim(), b.pixels().dim())));
    }
    Ok(a.pixels().outer_iter().zip(b.pixels().outer_iter()).map(|(x, y)| similarity(kind, x, y)).collect())
}
