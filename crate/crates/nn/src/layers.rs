use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView2, Axis, Ix1, Ix2, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::param::{NamedTensor, Param, Parameters, ParametersError};
use crate::spectral::{power_iteration, spectral_estimate};
use crate::tensor::{col2im, conv_out, im2col, Tensor};

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn pop<T>(stack: &mut Vec<T>, layer: &str) -> T {
    stack.pop().unwrap_or_else(|| panic!("{layer}: backward called without a matching forward"))
}

pub trait Module {
    /// Training forward pass; pushes a cache entry.
    fn forward(&mut self, x: &Tensor) -> Tensor;
    /// Pops the latest cache entry, accumulates parameter gradients and
    /// returns the gradient with respect to the input.
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    /// Inference pass: no caches, no state updates.
    fn infer(&self, x: &Tensor) -> Tensor;
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));
    fn clear_cache(&mut self);

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn parameters(&self) -> Parameters {
        let mut out = Parameters::new();
        self.visit("", &mut |name, p| {
            let v = p.value.as_standard_layout();
            out.push(NamedTensor {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                data: v.iter().copied().collect(),
            })
            .expect("module parameter names are unique");
        });
        out
    }

    fn load_parameters(&mut self, params: &Parameters) -> Result<(), ParametersError> {
        let mut err = None;
        self.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match params.get(name) {
                None => err = Some(ParametersError::Missing(name.to_string())),
                Some(t) if t.shape != p.value.shape() => {
                    err = Some(ParametersError::ShapeMismatch {
                        name: name.to_string(),
                        expected: p.value.shape().to_vec(),
                        found: t.shape.clone(),
                    })
                }
                Some(t) => {
                    p.value = ArrayD::from_shape_vec(IxDyn(&t.shape), t.data.clone()).expect("shape checked");
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

// ---------------------------------------------------------------------------

struct ConvCache {
    cols: Vec<f32>,
    in_dim: (usize, usize, usize, usize),
    w_eff: Array2<f32>,
    sn: Option<(f32, Array1<f32>, Array1<f32>)>,
}

/// 2-d convolution with square kernels, zero padding and optional spectral
/// normalization of the `out × (in·k·k)` weight matrix.
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    sn_u: Option<Param>,
    sn_iters: usize,
    stack: Vec<ConvCache>,
}

impl Conv2d {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f32;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        let weight = ArrayD::from_shape_fn(IxDyn(&[out_ch, in_ch, kernel, kernel]), |_| normal.sample(rng));
        Conv2d {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_ch]))),
            kernel,
            stride,
            padding,
            sn_u: None,
            sn_iters: 1,
            stack: Vec::new(),
        }
    }

    /// Enable spectral normalization with `iters` power iterations per
    /// training forward pass.
    pub fn with_spectral_norm<R: Rng>(mut self, iters: usize, rng: &mut R) -> Self {
        let rows = self.out_channels();
        let normal = Normal::new(0.0f32, 1.0).expect("valid std");
        let mut u = Array1::from_shape_fn(rows, |_| normal.sample(rng));
        let n = u.dot(&u).sqrt().max(1e-12);
        u /= n;
        self.sn_u = Some(Param::buffer(u.into_dyn()));
        self.sn_iters = iters.max(1);
        self
    }

    pub fn has_spectral_norm(&self) -> bool {
        self.sn_u.is_some()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn k_dim(&self) -> usize {
        self.in_channels() * self.kernel * self.kernel
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        self.weight.value.view().into_shape_with_order((self.out_channels(), self.k_dim())).expect("contiguous weight")
    }

    fn run(&self, x: &Tensor, w_eff: &Array2<f32>) -> (Tensor, Vec<f32>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels(), "conv input channel mismatch");
        let ho = conv_out(h, self.kernel, self.stride, self.padding);
        let wo = conv_out(w, self.kernel, self.stride, self.padding);
        let kd = self.k_dim();
        let plane = ho * wo;
        let out_ch = self.out_channels();
        let mut cols = vec![0.0f32; n * kd * plane];
        let mut y = Array4::<f32>::zeros((n, out_ch, ho, wo));
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-d bias");
        for i in 0..n {
            let chunk = &mut cols[i * kd * plane..(i + 1) * kd * plane];
            im2col(x.slice(s![i, .., .., ..]), self.kernel, self.stride, self.padding, chunk);
            let cols_i = ArrayView2::from_shape((kd, plane), chunk).expect("col shape");
            let mut y_i =
                y.slice_mut(s![i, .., .., ..]).into_shape_with_order((out_ch, plane)).expect("contiguous output");
            general_mat_mul(1.0, w_eff, &cols_i, 0.0, &mut y_i);
            for (mut row, b) in y_i.axis_iter_mut(Axis(0)).zip(bias.iter()) {
                row += *b;
            }
        }
        (y, cols)
    }
}

impl Module for Conv2d {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let w2 = self.weight_matrix().to_owned();
        let (w_eff, sn) = match &mut self.sn_u {
            Some(u) => {
                let u_vec = u.value.view().into_dimensionality::<Ix1>().expect("1-d u");
                let (sigma, u_new, v) = power_iteration(w2.view(), u_vec, self.sn_iters);
                u.value = u_new.clone().into_dyn();
                let sigma = sigma.max(1e-12);
                (w2.mapv(|a| a / sigma), Some((sigma, u_new, v)))
            }
            None => (w2, None),
        };
        let (y, cols) = self.run(x, &w_eff);
        self.stack.push(ConvCache { cols, in_dim: x.dim(), w_eff, sn });
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = pop(&mut self.stack, "conv2d");
        let (n, c, h, w) = cache.in_dim;
        let (_, out_ch, ho, wo) = grad.dim();
        let plane = ho * wo;
        let kd = self.k_dim();
        let grad = grad.as_standard_layout();
        let mut dw = Array2::<f32>::zeros((out_ch, kd));
        let mut db = Array1::<f32>::zeros(out_ch);
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let mut dcols = Array2::<f32>::zeros((kd, plane));
        for i in 0..n {
            let g_i = grad.slice(s![i, .., .., ..]).into_shape_with_order((out_ch, plane)).expect("contiguous grad");
            let cols_i = ArrayView2::from_shape((kd, plane), &cache.cols[i * kd * plane..(i + 1) * kd * plane])
                .expect("col shape");
            general_mat_mul(1.0, &g_i, &cols_i.t(), 1.0, &mut dw);
            db += &g_i.sum_axis(Axis(1));
            general_mat_mul(1.0, &cache.w_eff.t(), &g_i, 0.0, &mut dcols);
            col2im(
                dcols.as_slice().expect("contiguous"),
                self.kernel,
                self.stride,
                self.padding,
                dx.slice_mut(s![i, .., .., ..]),
            );
        }
        if let Some((sigma, u, v)) = &cache.sn {
            // W_eff = W / sigma(W) with sigma = uᵀWv and u, v held fixed.
            let inner: f32 = (&dw * &cache.w_eff).sum();
            let outer = u.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
            dw = (dw - outer * inner) / *sigma;
        }
        let wshape = self.weight.grad.raw_dim();
        self.weight.grad += &dw.into_shape_with_order(wshape).expect("weight shape");
        self.bias.grad += &db.into_dyn();
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let w2 = self.weight_matrix();
        let w_eff = match &self.sn_u {
            Some(u) => {
                let u_vec = u.value.view().into_dimensionality::<Ix1>().expect("1-d u");
                let (sigma, _) = spectral_estimate(w2, u_vec);
                w2.mapv(|a| a / sigma.max(1e-12))
            }
            None => w2.to_owned(),
        };
        self.run(x, &w_eff).0
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
        if let Some(u) = &self.sn_u {
            f(&join(prefix, "sn_u"), u);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
        if let Some(u) = &mut self.sn_u {
            f(&join(prefix, "sn_u"), u);
        }
    }

    fn clear_cache(&mut self) {
        self.stack.clear();
    }
}

// ---------------------------------------------------------------------------

/// Per-sample, per-channel normalization over the spatial axes with a learned
/// affine transform.
pub struct InstanceNorm {
    pub gamma: Param,
    pub beta: Param,
    eps: f32,
    stack: Vec<(Tensor, Array2<f32>)>,
}

impl InstanceNorm {
    pub fn new(channels: usize) -> Self {
        InstanceNorm {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            eps: 1e-5,
            stack: Vec::new(),
        }
    }

    fn normalize(&self, x: &Tensor) -> (Tensor, Array2<f32>, Tensor) {
        let (n, c, h, w) = x.dim();
        let hw = (h * w) as f32;
        let mut xhat = Array4::<f32>::zeros((n, c, h, w));
        let mut y = Array4::<f32>::zeros((n, c, h, w));
        let mut inv_std = Array2::<f32>::zeros((n, c));
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let beta = self.beta.value.as_slice().expect("contiguous");
        for i in 0..n {
            for ch in 0..c {
                let plane = x.slice(s![i, ch, .., ..]);
                let mean = plane.sum() / hw;
                let var = plane.fold(0.0f32, |a, &v| a + (v - mean) * (v - mean)) / hw;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[[i, ch]] = istd;
                let mut xh = xhat.slice_mut(s![i, ch, .., ..]);
                xh.zip_mut_with(&plane, |o, &v| *o = (v - mean) * istd);
                let mut yo = y.slice_mut(s![i, ch, .., ..]);
                yo.zip_mut_with(&xh, |o, &v| *o = gamma[ch] * v + beta[ch]);
            }
        }
        (y, inv_std, xhat)
    }
}

impl Module for InstanceNorm {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let (y, inv_std, xhat) = self.normalize(x);
        self.stack.push((xhat, inv_std));
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, inv_std) = pop(&mut self.stack, "instance_norm");
        let (n, c, h, w) = xhat.dim();
        let hw = (h * w) as f32;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let gamma = self.gamma.value.as_slice().expect("contiguous").to_vec();
        let mut dgamma = vec![0.0f32; c];
        let mut dbeta = vec![0.0f32; c];
        for i in 0..n {
            for ch in 0..c {
                let g = grad.slice(s![i, ch, .., ..]);
                let xh = xhat.slice(s![i, ch, .., ..]);
                let mut sum_g = 0.0f32;
                let mut sum_gx = 0.0f32;
                ndarray::Zip::from(&g).and(&xh).for_each(|&gv, &xv| {
                    sum_g += gv;
                    sum_gx += gv * xv;
                });
                dgamma[ch] += sum_gx;
                dbeta[ch] += sum_g;
                let scale = gamma[ch] * inv_std[[i, ch]] / hw;
                let mut d = dx.slice_mut(s![i, ch, .., ..]);
                ndarray::Zip::from(&mut d).and(&g).and(&xh).for_each(|o, &gv, &xv| {
                    *o = scale * (hw * gv - sum_g - xv * sum_gx);
                });
            }
        }
        self.gamma.grad += &ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).expect("shape");
        self.beta.grad += &ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).expect("shape");
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.normalize(x).0
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn clear_cache(&mut self) {
        self.stack.clear();
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActKind {
    Relu,
    LeakyRelu(f32),
    Tanh,
}

pub struct Activation {
    pub kind: ActKind,
    stack: Vec<Tensor>,
}

impl Activation {
    pub fn new(kind: ActKind) -> Self {
        Activation { kind, stack: Vec::new() }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        match self.kind {
            ActKind::Relu => x.mapv(|v| v.max(0.0)),
            ActKind::LeakyRelu(a) => x.mapv(|v| if v > 0.0 { v } else { a * v }),
            ActKind::Tanh => x.mapv(f32::tanh),
        }
    }
}

impl Module for Activation {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = self.apply(x);
        // tanh caches its output, the rectifiers their input.
        self.stack.push(if self.kind == ActKind::Tanh { y.clone() } else { x.clone() });
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cached = pop(&mut self.stack, "activation");
        let mut dx = grad.to_owned();
        match self.kind {
            ActKind::Relu => dx.zip_mut_with(&cached, |g, &x| {
                if x <= 0.0 {
                    *g = 0.0
                }
            }),
            ActKind::LeakyRelu(a) => dx.zip_mut_with(&cached, |g, &x| {
                if x <= 0.0 {
                    *g *= a
                }
            }),
            ActKind::Tanh => dx.zip_mut_with(&cached, |g, &y| *g *= 1.0 - y * y),
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        self.apply(x)
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}

    fn clear_cache(&mut self) {
        self.stack.clear();
    }
}

// ---------------------------------------------------------------------------

/// Nearest-neighbour 2× upsampling.
#[derive(Default)]
pub struct Upsample;

impl Module for Upsample {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (n, c, h, w) = grad.dim();
        let mut dx = Array4::<f32>::zeros((n, c, h / 2, w / 2));
        for ((i, ch, y, x), g) in grad.indexed_iter() {
            dx[[i, ch, y / 2, x / 2]] += g;
        }
        dx
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dim();
        Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(i, ch, y, xx)| x[[i, ch, y / 2, xx / 2]])
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}
    fn clear_cache(&mut self) {}
}

/// Spatial mean: `N×C×H×W → N×C×1×1`.
#[derive(Default)]
pub struct GlobalAvgPool {
    stack: Vec<(usize, usize)>,
}

impl Module for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let (_, _, h, w) = x.dim();
        self.stack.push((h, w));
        self.infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (h, w) = pop(&mut self.stack, "global_avg_pool");
        let (n, c, _, _) = grad.dim();
        let scale = 1.0 / (h * w) as f32;
        Array4::from_shape_fn((n, c, h, w), |(i, ch, _, _)| grad[[i, ch, 0, 0]] * scale)
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dim();
        let m = x
            .view()
            .into_shape_with_order((n, c, h * w))
            .map(|v| v.mean_axis(Axis(2)).expect("non-empty"))
            .unwrap_or_else(|_| {
                x.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((n, c, h * w))
                    .expect("reshape")
                    .mean_axis(Axis(2))
                    .expect("non-empty")
            });
        m.into_shape_with_order((n, c, 1, 1)).expect("reshape")
    }

    fn visit(&self, _: &str, _: &mut dyn FnMut(&str, &Param)) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn FnMut(&str, &mut Param)) {}

    fn clear_cache(&mut self) {
        self.stack.clear();
    }
}

/// Fully connected layer on `N×C×1×1` tensors.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    stack: Vec<Array2<f32>>,
}

impl Linear {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / inputs as f32).sqrt()).expect("valid std");
        let w = ArrayD::from_shape_fn(IxDyn(&[outputs, inputs]), |_| normal.sample(rng));
        Linear { weight: Param::new(w), bias: Param::new(ArrayD::zeros(IxDyn(&[outputs]))), stack: Vec::new() }
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn flat(x: &Tensor) -> Array2<f32> {
        let (n, c, h, w) = x.dim();
        x.as_standard_layout().into_owned().into_shape_with_order((n, c * h * w)).expect("reshape")
    }
}

impl Module for Linear {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let flat = Self::flat(x);
        let y = self.infer(x);
        self.stack.push(flat);
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let input = pop(&mut self.stack, "linear");
        let g = Self::flat(grad);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        let dw = g.t().dot(&input);
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &g.sum_axis(Axis(0)).into_dyn();
        let dx = g.dot(&w);
        let (n, c) = dx.dim();
        dx.into_shape_with_order((n, c, 1, 1)).expect("reshape")
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let flat = Self::flat(x);
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("2-d weight");
        let b = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-d bias");
        let y = flat.dot(&w.t()) + b;
        let (n, o) = y.dim();
        y.into_shape_with_order((n, o, 1, 1)).expect("reshape")
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }

    fn clear_cache(&mut self) {
        self.stack.clear();
    }
}

// ---------------------------------------------------------------------------

pub enum Layer {
    Conv(Conv2d),
    Norm(InstanceNorm),
    Act(Activation),
    Upsample(Upsample),
    Pool(GlobalAvgPool),
    Linear(Linear),
    /// `x + body(x)`
    Residual(Sequential),
}

impl Layer {
    fn module(&self) -> &dyn Module {
        match self {
            Layer::Conv(m) => m,
            Layer::Norm(m) => m,
            Layer::Act(m) => m,
            Layer::Upsample(m) => m,
            Layer::Pool(m) => m,
            Layer::Linear(m) => m,
            Layer::Residual(m) => m,
        }
    }

    fn module_mut(&mut self) -> &mut dyn Module {
        match self {
            Layer::Conv(m) => m,
            Layer::Norm(m) => m,
            Layer::Act(m) => m,
            Layer::Upsample(m) => m,
            Layer::Pool(m) => m,
            Layer::Linear(m) => m,
            Layer::Residual(m) => m,
        }
    }

    pub fn relu() -> Self {
        Layer::Act(Activation::new(ActKind::Relu))
    }

    pub fn leaky_relu(slope: f32) -> Self {
        Layer::Act(Activation::new(ActKind::LeakyRelu(slope)))
    }

    pub fn tanh() -> Self {
        Layer::Act(Activation::new(ActKind::Tanh))
    }
}

impl Module for Layer {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        match self {
            Layer::Residual(body) => x + &body.forward(x),
            other => other.module_mut().forward(x),
        }
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        match self {
            Layer::Residual(body) => grad + &body.backward(grad),
            other => other.module_mut().backward(grad),
        }
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Residual(body) => x + &body.infer(x),
            other => other.module().infer(x),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.module().visit(prefix, f)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.module_mut().visit_mut(prefix, f)
    }

    fn clear_cache(&mut self) {
        self.module_mut().clear_cache()
    }
}

/// A chain of layers. Intermediate outputs can be tapped (and receive extra
/// gradient) by layer index.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    /// Forward pass that also returns the outputs of the layers in `taps`.
    pub fn forward_taps(&mut self, x: &Tensor, taps: &[usize]) -> (Tensor, Vec<Tensor>) {
        let mut h = x.clone();
        let mut tapped = Vec::with_capacity(taps.len());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h);
            if taps.contains(&i) {
                tapped.push(h.clone());
            }
        }
        (h, tapped)
    }

    /// Backward pass injecting additional gradient at tapped layer outputs.
    pub fn backward_taps(&mut self, grad: &Tensor, extra: &[(usize, Tensor)]) -> Tensor {
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            for (idx, eg) in extra {
                if *idx == i {
                    g += eg;
                }
            }
            g = layer.backward(&g);
        }
        g
    }

    pub fn conv_layers_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.push(c),
                Layer::Residual(body) => out.extend(body.conv_layers_mut()),
                _ => {}
            }
        }
        out
    }
}

impl Module for Sequential {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    fn infer(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h);
        }
        h
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }

    fn clear_cache(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar objective `sum(y * r)` for a fixed random `r`, so its input
    /// gradient is `backward(r)`.
    fn check_input_gradient(layer: &mut dyn Module, shape: (usize, usize, usize, usize), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array4::from_shape_fn(shape, |_| rng.random_range(-1.0f32..1.0));
        let y = layer.forward(&x);
        let r = Array4::from_shape_fn(y.dim(), |_| rng.random_range(-1.0f32..1.0));
        let dx = layer.backward(&r);
        let objective = |layer: &dyn Module, x: &Tensor| -> f64 {
            layer.infer(x).iter().zip(r.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let h = 1e-2f32;
        for idx in [0usize, 3, 7, x.len() - 1] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let step = (xp.as_slice().unwrap()[idx] - xm.as_slice().unwrap()[idx]) as f64;
            let fd = (objective(layer, &xp) - objective(layer, &xm)) / step;
            let an = dx.as_slice().unwrap()[idx] as f64;
            assert!(
                (fd - an).abs() <= 2e-2 * fd.abs().max(1.0),
                "index {idx}: finite difference {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn conv_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        check_input_gradient(&mut conv, (2, 2, 6, 6), 2);
    }

    #[test]
    fn instance_norm_input_gradient() {
        let mut norm = InstanceNorm::new(3);
        check_input_gradient(&mut norm, (2, 3, 4, 4), 5);
    }

    #[test]
    fn residual_stack_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Sequential::new(vec![
            Layer::Conv(Conv2d::new(3, 4, 3, 1, 1, &mut rng)),
            Layer::Norm(InstanceNorm::new(4)),
            Layer::Residual(Sequential::new(vec![Layer::Conv(Conv2d::new(4, 4, 3, 1, 1, &mut rng)), Layer::tanh()])),
            Layer::Upsample(Upsample),
            Layer::Pool(GlobalAvgPool::default()),
            Layer::Linear(Linear::new(4, 2, &mut rng)),
        ]);
        check_input_gradient(&mut net, (2, 3, 4, 4), 11);
    }

    #[test]
    fn spectral_norm_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv2d::new(2, 3, 3, 1, 1, &mut rng).with_spectral_norm(30, &mut rng);
        let x = Array4::from_shape_fn((1, 2, 4, 4), |_| rng.random_range(-1.0f32..1.0));
        // Converge u first so the estimate is stationary under perturbation.
        conv.forward(&x);
        conv.clear_cache();
        let y = conv.forward(&x);
        let r = Array4::from_shape_fn(y.dim(), |_| rng.random_range(-1.0f32..1.0));
        conv.zero_grad();
        conv.backward(&r);
        let analytic = conv.weight.grad.clone();
        let h = 1e-2f32;
        for idx in [0usize, 5, 17, 40] {
            let orig = conv.weight.value.as_slice().unwrap()[idx];
            let eval = |c: &mut Conv2d, v: f32| -> f64 {
                c.weight.value.as_slice_mut().unwrap()[idx] = v;
                let (s, _, _) = power_iteration(
                    c.weight_matrix(),
                    c.sn_u.as_ref().unwrap().value.view().into_dimensionality::<Ix1>().unwrap(),
                    200,
                );
                let w = c.weight_matrix().mapv(|a| a / s);
                let out = c.run(&x, &w).0;
                out.iter().zip(r.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
            };
            let fp = eval(&mut conv, orig + h);
            let fm = eval(&mut conv, orig - h);
            conv.weight.value.as_slice_mut().unwrap()[idx] = orig;
            let fd = (fp - fm) / (2.0 * h as f64);
            let an = analytic.as_slice().unwrap()[idx] as f64;
            assert!((fd - an).abs() <= 3e-2 * fd.abs().max(0.1), "idx {idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn parameters_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Sequential::new(vec![Layer::Conv(Conv2d::new(3, 4, 3, 1, 1, &mut rng))]);
        let mut b = Sequential::new(vec![Layer::Conv(Conv2d::new(3, 4, 3, 1, 1, &mut rng))]);
        assert_ne!(a.parameters(), b.parameters());
        b.load_parameters(&a.parameters()).unwrap();
        assert_eq!(a.parameters().fingerprint(), b.parameters().fingerprint());
    }
}
