//! Procedural identity datasets.
//!
//! A *faceoid* is an oval face with hair, eyes, brows and a mouth; a *flowroid*
//! is a flower with a disc and petals. Every geometric and colour attribute is
//! drawn from an RNG seeded by `(seed, identity)`, so identities are stable
//! across calls, while pose, lighting and expression are drawn per image.

use std::f32::consts::PI;
use std::str::FromStr;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DomainDataset, ImageBatch};
use crate::error::{Error, Result};
use crate::seeds::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthDomain {
    Faceoid,
    Flowroid,
}

impl SynthDomain {
    pub fn tag(self) -> &'static str {
        match self {
            SynthDomain::Faceoid => "faceoid",
            SynthDomain::Flowroid => "flowroid",
        }
    }
}

impl FromStr for SynthDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "faceoid" => Ok(SynthDomain::Faceoid),
            "flowroid" => Ok(SynthDomain::Flowroid),
            other => Err(Error::InvalidDomain(other.to_string())),
        }
    }
}

type Rgb = [f32; 3];

fn lerp(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn hsv(h: f32, s: f32, v: f32) -> Rgb {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn inside_ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> bool {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

/// Identity-level attributes of a faceoid, in unit-square coordinates.
struct FaceIdentity {
    skin: Rgb,
    hair: Rgb,
    iris: Rgb,
    lips: Rgb,
    face_rx: f32,
    face_ry: f32,
    hair_line: f32,
    hair_length: f32,
    eye_sep: f32,
    eye_y: f32,
    eye_r: f32,
    brow_tilt: f32,
    mouth_y: f32,
    mouth_w: f32,
    mouth_h: f32,
}

impl FaceIdentity {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let dark: Rgb = [0.35, 0.22, 0.15];
        let light: Rgb = [0.98, 0.84, 0.72];
        let hair_palette: [Rgb; 6] = [
            [0.08, 0.06, 0.05],
            [0.35, 0.2, 0.1],
            [0.85, 0.7, 0.35],
            [0.65, 0.25, 0.1],
            [0.6, 0.6, 0.6],
            [0.2, 0.12, 0.3],
        ];
        let hair = hair_palette[rng.random_range(0..hair_palette.len())];
        let hair_tint = rng.random_range(-0.08f32..0.08);
        FaceIdentity {
            skin: lerp(dark, light, rng.random_range(0.0..1.0)),
            hair: hair.map(|c| (c + hair_tint).clamp(0.0, 1.0)),
            iris: hsv(rng.random_range(0.0..1.0), 0.7, rng.random_range(0.2..0.6)),
            lips: hsv(rng.random_range(-0.05..0.05), rng.random_range(0.4..0.8), rng.random_range(0.4..0.8)),
            face_rx: rng.random_range(0.24..0.34),
            face_ry: rng.random_range(0.30..0.40),
            hair_line: rng.random_range(0.30..0.42),
            hair_length: rng.random_range(0.0..0.35),
            eye_sep: rng.random_range(0.08..0.14),
            eye_y: rng.random_range(0.45..0.52),
            eye_r: rng.random_range(0.025..0.05),
            brow_tilt: rng.random_range(-0.03..0.03),
            mouth_y: rng.random_range(0.66..0.74),
            mouth_w: rng.random_range(0.06..0.13),
            mouth_h: rng.random_range(0.015..0.04),
        }
    }

    fn shade(&self, x: f32, y: f32, expression: f32) -> Option<Rgb> {
        let (cx, cy) = (0.5, 0.55);
        let in_face = inside_ellipse(x, y, cx, cy, self.face_rx, self.face_ry);
        let in_hair_cap = inside_ellipse(x, y, cx, cy - 0.03, self.face_rx + 0.04, self.face_ry + 0.05);
        let hair_bottom = self.hair_line + self.hair_length;
        let side = (x - cx).abs() > self.face_rx * 0.75;
        if in_hair_cap && (y < self.hair_line || (side && y < hair_bottom)) {
            return Some(self.hair);
        }
        if !in_face {
            return None;
        }
        for sx in [-1.0f32, 1.0] {
            let ex = cx + sx * self.eye_sep;
            if inside_ellipse(x, y, ex, self.eye_y, self.eye_r * 1.6, self.eye_r) {
                return Some(if inside_ellipse(x, y, ex, self.eye_y, self.eye_r * 0.7, self.eye_r * 0.9) {
                    self.iris
                } else {
                    [0.95, 0.95, 0.95]
                });
            }
            let brow_y = self.eye_y - self.eye_r * 2.2 + sx * self.brow_tilt * (x - ex) * 8.0;
            if (x - ex).abs() < self.eye_r * 1.8 && (y - brow_y).abs() < 0.012 {
                return Some(self.hair);
            }
        }
        let mh = self.mouth_h * expression;
        if inside_ellipse(x, y, cx, self.mouth_y, self.mouth_w, mh.max(0.006)) {
            return Some(self.lips);
        }
        Some(self.skin)
    }
}

struct FlowerIdentity {
    petal: Rgb,
    petal_tip: Rgb,
    disc: Rgb,
    petals: u32,
    petal_len: f32,
    petal_width: f32,
    disc_r: f32,
    phase: f32,
}

impl FlowerIdentity {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let hue = rng.random_range(0.0..1.0);
        FlowerIdentity {
            petal: hsv(hue, rng.random_range(0.5..0.95), rng.random_range(0.6..1.0)),
            petal_tip: hsv(hue + rng.random_range(-0.1..0.1), rng.random_range(0.2..0.9), rng.random_range(0.7..1.0)),
            disc: hsv(rng.random_range(0.05..0.18), rng.random_range(0.6..1.0), rng.random_range(0.3..0.9)),
            petals: rng.random_range(4..10),
            petal_len: rng.random_range(0.22..0.4),
            petal_width: rng.random_range(0.05..0.12),
            disc_r: rng.random_range(0.06..0.13),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn shade(&self, x: f32, y: f32, openness: f32) -> Option<Rgb> {
        let dx = x - 0.5;
        let dy = y - 0.5;
        let r = (dx * dx + dy * dy).sqrt();
        if r <= self.disc_r {
            return Some(self.disc);
        }
        let theta = dy.atan2(dx) - self.phase;
        let step = 2.0 * PI / self.petals as f32;
        let delta = theta - step * (theta / step).round();
        let along = r * delta.cos();
        let across = r * delta.sin();
        let len = self.petal_len * openness;
        let center = self.disc_r * 0.5 + len * 0.5;
        let a = len * 0.5 + self.disc_r * 0.5;
        let t = ((along - center) / a + 1.0) * 0.5;
        if inside_ellipse(along, across, center, 0.0, a, self.petal_width) {
            return Some(lerp(self.petal, self.petal_tip, t.clamp(0.0, 1.0)));
        }
        None
    }
}

/// Per-image nuisance: pose, lighting and expression.
struct Variation {
    shift: (f32, f32),
    angle: f32,
    scale: f32,
    light: f32,
    expression: f32,
}

impl Variation {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Variation {
            shift: (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)),
            angle: rng.random_range(-8.0f32..8.0).to_radians(),
            scale: rng.random_range(0.94..1.06),
            light: rng.random_range(0.85..1.12),
            expression: rng.random_range(0.6..1.5),
        }
    }

    /// Image coordinates → canonical sprite coordinates.
    fn to_canonical(&self, x: f32, y: f32) -> (f32, f32) {
        let (dx, dy) = (x - 0.5 - self.shift.0, y - 0.5 - self.shift.1);
        let (s, c) = self.angle.sin_cos();
        let rx = (c * dx + s * dy) / self.scale;
        let ry = (-s * dx + c * dy) / self.scale;
        (rx + 0.5, ry + 0.5)
    }
}

const SUPERSAMPLE: usize = 2;

fn render(
    size: usize,
    background: Rgb,
    var: &Variation,
    shade: impl Fn(f32, f32) -> Option<Rgb>,
    out: &mut Array4<f32>,
    index: usize,
) {
    let inv = 1.0 / (size * SUPERSAMPLE) as f32;
    for py in 0..size {
        for px in 0..size {
            let mut acc = [0.0f32; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = ((px * SUPERSAMPLE + sx) as f32 + 0.5) * inv;
                    let y = ((py * SUPERSAMPLE + sy) as f32 + 0.5) * inv;
                    let (cx, cy) = var.to_canonical(x, y);
                    let col = shade(cx, cy).map(|c| c.map(|v| v * var.light)).unwrap_or(background);
                    for c in 0..3 {
                        acc[c] += col[c];
                    }
                }
            }
            let n = (SUPERSAMPLE * SUPERSAMPLE) as f32;
            for c in 0..3 {
                out[[index, py, px, c]] = ((acc[c] / n).clamp(0.0, 1.0) * 2.0 - 1.0).clamp(-1.0, 1.0);
            }
        }
    }
}

/// Render `n_identities × per_identity` images; identities are `0..n_identities`
/// in identity-major order.
pub fn synth_identity_dataset(
    n_identities: usize,
    per_identity: usize,
    size: usize,
    domain_tag: &str,
    seed: u64,
) -> Result<DomainDataset> {
    let domain: SynthDomain = domain_tag.parse()?;
    if n_identities == 0 || per_identity == 0 {
        return Err(Error::InvalidArgument("need at least one identity and one image each".into()));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("image size {size} too small")));
    }
    let count = n_identities * per_identity;
    let mut pixels = Array4::zeros((count, size, size, 3));
    let mut ids = Vec::with_capacity(count);
    let salt = match domain {
        SynthDomain::Faceoid => 0xFACE,
        SynthDomain::Flowroid => 0xF10E,
    };
    for id in 0..n_identities {
        let mut id_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[salt, id as u64]));
        let face = (domain == SynthDomain::Faceoid).then(|| FaceIdentity::draw(&mut id_rng));
        let flower = (domain == SynthDomain::Flowroid).then(|| FlowerIdentity::draw(&mut id_rng));
        for j in 0..per_identity {
            let index = id * per_identity + j;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[salt, id as u64, j as u64 + 1]));
            let var = Variation::draw(&mut rng);
            match (&face, &flower) {
                (Some(f), _) => {
                    let bg = [0.92, 0.92, 0.9];
                    render(size, bg, &var, |x, y| f.shade(x, y, var.expression), &mut pixels, index)
                }
                (_, Some(f)) => {
                    let bg = [0.16, 0.32, 0.14];
                    let open = 0.85 + 0.1 * var.expression;
                    render(size, bg, &var, |x, y| f.shade(x, y, open), &mut pixels, index)
                }
                _ => unreachable!("domain parsed above"),
            }
            ids.push(id as u32);
        }
    }
    let mut ds = DomainDataset::new(domain.tag(), ImageBatch::new(pixels)?, Some(ids))?;
    ds.seed = Some(seed);
    Ok(ds)
}
