use ndarray::{s, Array4, ArrayView3, ArrayViewMut3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ImageBatch;
use crate::error::{Error, Result};

/// Ranges for the parametric identity augmenter. A zeroed value disables the
/// corresponding transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(deny_unknown_fields)]
pub struct AugmentParams {
    pub max_rotation_deg: f32,
    /// Fraction of the hue circle, at most 0.5.
    pub hue_shift_range: f32,
    /// Scale factor drawn from `1 ± zoom_range`.
    pub zoom_range: f32,
    /// Per-channel offset applied to background pixels.
    pub background_jitter: f32,
    pub seed: u64,
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("max_rotation_deg", self.max_rotation_deg),
            ("hue_shift_range", self.hue_shift_range),
            ("zoom_range", self.zoom_range),
            ("background_jitter", self.background_jitter),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.hue_shift_range > 0.5 {
            return Err(Error::InvalidArgument("hue_shift_range must be in [0, 0.5]".into()));
        }
        if self.zoom_range >= 1.0 {
            return Err(Error::InvalidArgument("zoom_range must be below 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Concrete transform applied to one output image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f32,
    pub hue_shift: f32,
    pub zoom: f32,
    pub background_offset: [f32; 3],
}

fn symmetric(rng: &mut ChaCha8Rng, range: f32) -> f32 {
    ((2.0 * rng.random::<f64>() - 1.0) * range as f64) as f32
}

/// The draws used for `count` output images. The RNG seeded with
/// `params.seed` is consumed in blocks: all rotations first, then hues, zooms
/// and background offsets, so output `j`'s angle is the generator's `j`-th
/// draw scaled to `±max_rotation_deg`.
pub fn augment_plan(count: usize, params: &AugmentParams) -> Vec<AugmentDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let rot: Vec<f32> = (0..count).map(|_| symmetric(&mut rng, params.max_rotation_deg)).collect();
    let hue: Vec<f32> = (0..count).map(|_| symmetric(&mut rng, params.hue_shift_range)).collect();
    let zoom: Vec<f32> = (0..count).map(|_| 1.0 + symmetric(&mut rng, params.zoom_range)).collect();
    let bg: Vec<[f32; 3]> = (0..count).map(|_| [0; 3].map(|_| symmetric(&mut rng, params.background_jitter))).collect();
    (0..count)
        .map(|j| AugmentDraw { rotation_deg: rot[j], hue_shift: hue[j], zoom: zoom[j], background_offset: bg[j] })
        .collect()
}

fn bilinear(img: &ArrayView3<f32>, x: f32, y: f32, fill: [f32; 3], c: usize) -> f32 {
    let (h, w, _) = img.dim();
    if x < 0.0 || y < 0.0 || x > (w - 1) as f32 || y > (h - 1) as f32 {
        return fill[c];
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = img[[y0, x0, c]] * (1.0 - fx) + img[[y0, x1, c]] * fx;
    let bottom = img[[y1, x0, c]] * (1.0 - fx) + img[[y1, x1, c]] * fx;
    top * (1.0 - fy) + bottom * fy
}

fn apply(src: ArrayView3<f32>, draw: &AugmentDraw, mut dst: ArrayViewMut3<f32>) {
    let (h, w, _) = src.dim();
    let corner = [src[[0, 0, 0]], src[[0, 0, 1]], src[[0, 0, 2]]];
    if draw.rotation_deg != 0.0 || draw.zoom != 1.0 {
        let (sin, cos) = draw.rotation_deg.to_radians().sin_cos();
        let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f32 - cx;
                let dy = y as f32 - cy;
                let sx = (cos * dx + sin * dy) / draw.zoom + cx;
                let sy = (-sin * dx + cos * dy) / draw.zoom + cy;
                for c in 0..3 {
                    dst[[y, x, c]] = bilinear(&src, sx, sy, corner, c);
                }
            }
        }
    } else {
        dst.assign(&src);
    }
    if draw.hue_shift != 0.0 {
        let angle = draw.hue_shift * 2.0 * std::f32::consts::PI;
        let (sin, cos) = angle.sin_cos();
        let a = cos + (1.0 - cos) / 3.0;
        let b = (1.0 - cos) / 3.0 - (1.0f32 / 3.0).sqrt() * sin;
        let c = (1.0 - cos) / 3.0 + (1.0f32 / 3.0).sqrt() * sin;
        for mut px in dst.rows_mut() {
            let [r, g, bl] = [0, 1, 2].map(|i| (px[i] + 1.0) * 0.5);
            let out = [a * r + b * g + c * bl, c * r + a * g + b * bl, b * r + c * g + a * bl];
            for i in 0..3 {
                px[i] = out[i].clamp(0.0, 1.0) * 2.0 - 1.0;
            }
        }
    }
    if draw.background_offset != [0.0; 3] {
        for mut px in dst.rows_mut() {
            let is_bg = (0..3).all(|i| (px[i] - corner[i]).abs() < 0.06);
            if is_bg {
                for i in 0..3 {
                    px[i] += draw.background_offset[i];
                }
            }
        }
    }
    dst.mapv_inplace(|v| v.clamp(-1.0, 1.0));
}

/// `copies` augmented versions of every image, image-major: output
/// `i·copies + c` is copy `c` of input `i`.
pub fn augment_identity(images: &ImageBatch, params: &AugmentParams, copies: usize) -> Result<ImageBatch> {
    if copies < 1 {
        return Err(Error::InvalidArgument("copies must be at least 1".into()));
    }
    params.validate()?;
    let n = images.len();
    let (h, w) = (images.height(), images.width());
    let plan = augment_plan(n * copies, params);
    let mut out = Array4::zeros((n * copies, h, w, 3));
    let px = images.pixels();
    for (j, draw) in plan.iter().enumerate() {
        apply(px.slice(s![j / copies, .., .., ..]), draw, out.slice_mut(s![j, .., .., ..]));
    }
    ImageBatch::new(out)
}
