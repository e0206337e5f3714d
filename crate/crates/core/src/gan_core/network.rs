use ndarray::{Array2, Axis};
use privtranslate_nn::layers::{GlobalAvgPool, Upsample};
use privtranslate_nn::{Conv2d, InstanceNorm, Layer, Linear, Module, Parameters, Sequential, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    /// Encoder / residual bottleneck / decoder with a tanh output.
    Generator,
    /// Strided convolutions ending in a one-channel patch map.
    Discriminator,
    /// Strided convolutions, global average pooling and a linear embedding.
    Siamese,
    /// The generator's encoder / bottleneck / decoder wrapped in a
    /// full-resolution skip, with an unnormalized stem, so absolute colour
    /// survives the instance norms. Used for inverse (attack) mappings.
    Inverse,
}

fn default_res_blocks() -> usize {
    2
}

fn default_latent() -> usize {
    128
}

fn default_max_channels() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub input_size: usize,
    pub base_channels: usize,
    pub n_down_blocks: usize,
    #[serde(default)]
    pub use_spectral_norm: bool,
    pub seed: u64,
    #[serde(default = "default_res_blocks")]
    pub n_res_blocks: usize,
    /// Embedding length of siamese networks.
    #[serde(default = "default_latent")]
    pub latent_size: usize,
    #[serde(default = "default_max_channels")]
    pub max_channels: usize,
}

impl NetworkSpec {
    pub fn new(kind: NetworkKind, input_size: usize, base_channels: usize, n_down_blocks: usize, seed: u64) -> Self {
        NetworkSpec {
            kind,
            input_size,
            base_channels,
            n_down_blocks,
            use_spectral_norm: false,
            seed,
            n_res_blocks: default_res_blocks(),
            latent_size: default_latent(),
            max_channels: default_max_channels(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 1 {
            return Err(Error::InvalidSpec("base_channels must be at least 1".into()));
        }
        if self.n_down_blocks < 1 {
            return Err(Error::InvalidSpec("n_down_blocks must be at least 1".into()));
        }
        if self.input_size == 0
            || self.n_down_blocks >= usize::BITS as usize
            || !self.input_size.is_multiple_of(1usize << self.n_down_blocks)
        {
            return Err(Error::InvalidSpec(format!(
                "input_size {} not divisible by 2^{}",
                self.input_size, self.n_down_blocks
            )));
        }
        if self.kind == NetworkKind::Siamese && self.latent_size == 0 {
            return Err(Error::InvalidSpec("latent_size must be positive".into()));
        }
        if self.max_channels < self.base_channels {
            return Err(Error::InvalidSpec("max_channels below base_channels".into()));
        }
        Ok(())
    }

    /// Side length of a discriminator's patch map.
    pub fn patch_size(&self) -> usize {
        self.input_size >> self.n_down_blocks
    }
}

/// A built network: its spec plus the layer stack.
pub struct Network {
    pub spec: NetworkSpec,
    pub body: Sequential,
    /// Layer indices whose outputs are exposed as intermediate features.
    pub feature_taps: Vec<usize>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network").field("spec", &self.spec).field("layers", &self.body.layers.len()).finish()
    }
}

impl Clone for Network {
    fn clone(&self) -> Self {
        let mut net = build_network(&self.spec).expect("spec validated at construction");
        net.load_parameters(&self.parameters()).expect("identical architecture");
        net
    }
}

pub fn build_network(spec: &NetworkSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sn = spec.use_spectral_norm;
    let cap = spec.max_channels;
    let conv = |i: usize, o: usize, k: usize, s: usize, p: usize, rng: &mut ChaCha8Rng| {
        let c = Conv2d::new(i, o, k, s, p, rng);
        Layer::Conv(if sn { c.with_spectral_norm(1, rng) } else { c })
    };
    let mut layers = Vec::new();
    let mut taps = Vec::new();
    let base = spec.base_channels;
    match spec.kind {
        NetworkKind::Generator => {
            layers.push(conv(3, base, 3, 1, 1, &mut rng));
            layers.push(Layer::Norm(InstanceNorm::new(base)));
            layers.push(Layer::relu());
            let mut ch = base;
            let mut widths = Vec::new();
            for _ in 0..spec.n_down_blocks {
                let next = (ch * 2).min(cap);
                widths.push(ch);
                layers.push(conv(ch, next, 3, 2, 1, &mut rng));
                layers.push(Layer::Norm(InstanceNorm::new(next)));
                layers.push(Layer::relu());
                ch = next;
            }
            for _ in 0..spec.n_res_blocks {
                let body = Sequential::new(vec![
                    conv(ch, ch, 3, 1, 1, &mut rng),
                    Layer::Norm(InstanceNorm::new(ch)),
                    Layer::relu(),
                    conv(ch, ch, 3, 1, 1, &mut rng),
                    Layer::Norm(InstanceNorm::new(ch)),
                ]);
                layers.push(Layer::Residual(body));
            }
            for next in widths.into_iter().rev() {
                layers.push(Layer::Upsample(Upsample));
                layers.push(conv(ch, next, 3, 1, 1, &mut rng));
                layers.push(Layer::Norm(InstanceNorm::new(next)));
                layers.push(Layer::relu());
                ch = next;
            }
            layers.push(conv(ch, 3, 3, 1, 1, &mut rng));
            layers.push(Layer::tanh());
        }
        NetworkKind::Inverse => {
            layers.push(conv(3, base, 3, 1, 1, &mut rng));
            layers.push(Layer::leaky_relu(0.2));
            let mut inner = Vec::new();
            let mut ch = base;
            let mut widths = Vec::new();
            for _ in 0..spec.n_down_blocks {
                let next = (ch * 2).min(cap);
                widths.push(ch);
                inner.push(conv(ch, next, 3, 2, 1, &mut rng));
                inner.push(Layer::Norm(InstanceNorm::new(next)));
                inner.push(Layer::relu());
                ch = next;
            }
            for _ in 0..spec.n_res_blocks {
                inner.push(Layer::Residual(Sequential::new(vec![
                    conv(ch, ch, 3, 1, 1, &mut rng),
                    Layer::Norm(InstanceNorm::new(ch)),
                    Layer::relu(),
                    conv(ch, ch, 3, 1, 1, &mut rng),
                    Layer::Norm(InstanceNorm::new(ch)),
                ])));
            }
            for next in widths.into_iter().rev() {
                inner.push(Layer::Upsample(Upsample));
                inner.push(conv(ch, next, 3, 1, 1, &mut rng));
                inner.push(Layer::Norm(InstanceNorm::new(next)));
                inner.push(Layer::relu());
                ch = next;
            }
            inner.push(conv(ch, base, 3, 1, 1, &mut rng));
            layers.push(Layer::Residual(Sequential::new(inner)));
            layers.push(conv(base, 3, 3, 1, 1, &mut rng));
            layers.push(Layer::tanh());
        }
        NetworkKind::Discriminator => {
            let mut ch = 3;
            for i in 0..spec.n_down_blocks {
                let next = if i == 0 { base } else { (ch * 2).min(cap) };
                layers.push(conv(ch, next, 3, 2, 1, &mut rng));
                layers.push(Layer::leaky_relu(0.2));
                taps.push(layers.len() - 1);
                ch = next;
            }
            layers.push(conv(ch, 1, 3, 1, 1, &mut rng));
        }
        NetworkKind::Siamese => {
            let mut ch = 3;
            for i in 0..spec.n_down_blocks {
                let next = if i == 0 { base } else { (ch * 2).min(cap) };
                layers.push(conv(ch, next, 3, 2, 1, &mut rng));
                layers.push(Layer::leaky_relu(0.2));
                taps.push(layers.len() - 1);
                ch = next;
            }
            layers.push(Layer::Pool(GlobalAvgPool::default()));
            layers.push(Layer::Linear(Linear::new(ch, spec.latent_size, &mut rng)));
        }
    }
    Ok(Network { spec: spec.clone(), body: Sequential::new(layers), feature_taps: taps })
}

impl Network {
    fn check_input(&self, x: &Tensor) {
        let (_, c, h, w) = x.dim();
        assert!(
            c == 3 && h == self.spec.input_size && w == self.spec.input_size,
            "network expects 3×{0}×{0} input, got {c}×{h}×{w}",
            self.spec.input_size
        );
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.check_input(x);
        self.body.forward(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        self.body.backward(grad)
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.check_input(x);
        self.body.infer(x)
    }

    /// Training forward that also returns the tapped intermediate features.
    pub fn forward_features(&mut self, x: &Tensor) -> (Tensor, Vec<Tensor>) {
        self.check_input(x);
        let taps = self.feature_taps.clone();
        self.body.forward_taps(x, &taps)
    }

    /// Backward with extra gradient for each tapped feature (same order as
    /// [`Network::forward_features`]).
    pub fn backward_features(&mut self, grad: &Tensor, feature_grads: Vec<Tensor>) -> Tensor {
        let extra: Vec<(usize, Tensor)> = self.feature_taps.iter().copied().zip(feature_grads).collect();
        self.body.backward_taps(grad, &extra)
    }

    /// Embedding matrix (`N × latent`) for siamese-style networks.
    pub fn embed(&self, x: &Tensor) -> Array2<f32> {
        flatten(&self.infer(x))
    }

    pub fn parameters(&self) -> Parameters {
        self.body.parameters()
    }

    pub fn load_parameters(&mut self, params: &Parameters) -> Result<()> {
        Ok(self.body.load_parameters(params)?)
    }

    pub fn fingerprint(&self) -> String {
        self.parameters().fingerprint()
    }

    pub fn zero_grad(&mut self) {
        self.body.zero_grad();
    }

    pub fn clear_cache(&mut self) {
        self.body.clear_cache();
    }

    pub fn num_parameters(&self) -> usize {
        self.body.num_parameters()
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.body.visit("", &mut |_, p| ok &= p.value.iter().all(|v| v.is_finite()));
        ok
    }
}

/// `N×C×1×1` (or any 4-d tensor) → `N × rest`.
pub fn flatten(t: &Tensor) -> Array2<f32> {
    let n = t.len_of(Axis(0));
    let rest = t.len().checked_div(n).unwrap_or(0);
    t.as_standard_layout().into_owned().into_shape_with_order((n, rest)).expect("reshape")
}

/// `N × D` → `N×D×1×1`.
pub fn unflatten(m: Array2<f32>) -> Tensor {
    let (n, d) = m.dim();
    m.as_standard_layout().into_owned().into_shape_with_order((n, d, 1, 1)).expect("reshape")
}
