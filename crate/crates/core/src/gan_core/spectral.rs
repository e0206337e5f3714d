use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView2};
use privtranslate_nn::{power_iteration, Parameters};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeds::mix_seed;

/// Persistent power-iteration state for every weight matrix of a parameter
/// set, keyed by tensor name.
#[derive(Debug, Clone, Default)]
pub struct SpectralNormalizer {
    seed: u64,
    states: BTreeMap<String, Array1<f32>>,
    /// Latest estimate per tensor.
    pub sigmas: BTreeMap<String, f32>,
}

/// Tensors treated as weight matrices: rank ≥ 2 and named `*weight`.
fn is_weight(name: &str, shape: &[usize]) -> bool {
    shape.len() >= 2 && name.ends_with("weight")
}

impl SpectralNormalizer {
    pub fn new(seed: u64) -> Self {
        SpectralNormalizer { seed, ..Default::default() }
    }

    /// Replace each weight `W` (reshaped to `rows × rest`) by `W / σ̂(W)`.
    pub fn apply(&mut self, params: &Parameters, n_power_iterations: usize) -> Result<Parameters> {
        if n_power_iterations < 1 {
            return Err(Error::InvalidArgument("need at least one power iteration".into()));
        }
        let mut out = params.clone();
        for (k, t) in out.iter_mut().enumerate() {
            if !is_weight(&t.name, &t.shape) {
                continue;
            }
            let rows = t.shape[0];
            let cols = t.data.len() / rows.max(1);
            let w = ArrayView2::from_shape((rows, cols), &t.data).expect("shape checked");
            let seed = mix_seed(self.seed, &[k as u64]);
            let u0 = self.states.entry(t.name.clone()).or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u: Array1<f32> = Array1::from_shape_fn(rows, |_| StandardNormal.sample(&mut rng));
                let n = u.dot(&u).sqrt();
                u / n
            });
            let (sigma, u, _) = power_iteration(w, u0.view(), n_power_iterations);
            *u0 = u;
            self.sigmas.insert(t.name.clone(), sigma);
            let sigma = sigma.max(1e-12);
            t.data.iter_mut().for_each(|v| *v /= sigma);
        }
        Ok(out)
    }
}

/// One-shot normalization with fresh state.
pub fn apply_spectral_norm(params: &Parameters, n_power_iterations: usize) -> Result<Parameters> {
    SpectralNormalizer::new(0).apply(params, n_power_iterations)
}
