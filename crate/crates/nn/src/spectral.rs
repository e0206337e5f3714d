//! Power-iteration estimate of the largest singular value.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normalize(mut v: Array1<f32>) -> Array1<f32> {
    let n = v.dot(&v).sqrt();
    if n > 1e-12 {
        v /= n;
    }
    v
}

/// Run `iters` rounds of `v = Wᵀu/‖Wᵀu‖, u = Wv/‖Wv‖` starting from `u`.
///
/// Returns `(sigma, u, v)` with `sigma = uᵀ W v`.
pub fn power_iteration(w: ArrayView2<f32>, u: ArrayView1<f32>, iters: usize) -> (f32, Array1<f32>, Array1<f32>) {
    let mut u = u.to_owned();
    let mut v = normalize(w.t().dot(&u));
    for i in 0..iters.max(1) {
        if i > 0 {
            v = normalize(w.t().dot(&u));
        }
        u = normalize(w.dot(&v));
    }
    let sigma = u.dot(&w.dot(&v));
    (sigma, u, v)
}

/// Non-mutating estimate from a persisted `u`: one half step to recover `v`.
pub fn spectral_estimate(w: ArrayView2<f32>, u: ArrayView1<f32>) -> (f32, Array1<f32>) {
    let v = normalize(w.t().dot(&u));
    let wv = w.dot(&v);
    (wv.dot(&wv).sqrt(), v)
}

/// Persistent power-iteration state for one weight matrix.
#[derive(Debug, Clone)]
pub struct SpectralNorm {
    pub u: Array1<f32>,
    pub iters: usize,
}

impl SpectralNorm {
    pub fn new(rows: usize, iters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Array1::from_shape_fn(rows, |_| StandardNormal.sample(&mut rng));
        SpectralNorm { u: normalize(u), iters }
    }

    /// Advance the estimate and return `(sigma, u, v)`.
    pub fn step(&mut self, w: ArrayView2<f32>) -> (f32, Array1<f32>, Array1<f32>) {
        let (sigma, u, v) = power_iteration(w, self.u.view(), self.iters);
        self.u = u.clone();
        (sigma, u, v)
    }

    /// `W / sigma` using the current state, without advancing it.
    pub fn normalized(&self, w: ArrayView2<f32>) -> Array2<f32> {
        let (sigma, _) = spectral_estimate(w, self.u.view());
        w.mapv(|x| x / sigma.max(1e-12))
    }
}
