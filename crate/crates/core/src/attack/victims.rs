use ndarray::{Axis, Zip};
use privtranslate_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::translate::Translator;

/// Closed-form, invertible stand-ins for a trained generator, used to check
/// that the attack harness can invert when inversion is possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticVictim {
    Identity,
    /// Output channel `c` is input channel `perm[c]`.
    ChannelPermutation([usize; 3]),
    /// `y_c = scale_c · x_c + offset_c`, clamped to `[-1, 1]`.
    Affine {
        scale: [f32; 3],
        offset: [f32; 3],
    },
}

fn permute(x: &Tensor, perm: [usize; 3]) -> Tensor {
    let mut out = x.clone();
    for (c, &src) in perm.iter().enumerate() {
        out.index_axis_mut(Axis(1), c).assign(&x.index_axis(Axis(1), src));
    }
    out
}

fn affine(x: &Tensor, scale: [f32; 3], offset: [f32; 3]) -> Tensor {
    let mut out = x.clone();
    for c in 0..3 {
        Zip::from(out.index_axis_mut(Axis(1), c)).for_each(|v| *v = (scale[c] * *v + offset[c]).clamp(-1.0, 1.0));
    }
    out
}

impl Translator for AnalyticVictim {
    fn input_size(&self) -> Option<usize> {
        None
    }

    fn translate_tensor(&self, x: &Tensor) -> Tensor {
        match self {
            AnalyticVictim::Identity => x.clone(),
            AnalyticVictim::ChannelPermutation(p) => permute(x, *p),
            AnalyticVictim::Affine { scale, offset } => affine(x, *scale, *offset),
        }
    }

    fn reverse_tensor(&self, x: &Tensor) -> Option<Tensor> {
        Some(match self {
            AnalyticVictim::Identity => x.clone(),
            AnalyticVictim::ChannelPermutation(p) => {
                let mut inv = [0; 3];
                for (c, &src) in p.iter().enumerate() {
                    inv[src] = c;
                }
                permute(x, inv)
            }
            AnalyticVictim::Affine { scale, offset } => {
                affine(x, scale.map(|s| 1.0 / s), [0, 1, 2].map(|c| -offset[c] / scale[c]))
            }
        })
    }

    fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("serializes")
    }
}
