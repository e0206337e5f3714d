use ndarray::ArrayD;

use crate::layers::Module;

/// Adam over the trainable parameters of one module, matched by visit order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    moments: Vec<(ArrayD<f32>, ArrayD<f32>)>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Apply one update from the accumulated gradients, then zero them.
    pub fn step(&mut self, module: &mut dyn Module) {
        self.t += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let moments = &mut self.moments;
        let mut idx = 0;
        module.visit_mut("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if moments.len() <= idx {
                moments.push((ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
            }
            let (m, v) = &mut moments[idx];
            ndarray::Zip::from(&mut p.value).and(&mut p.grad).and(m).and(v).for_each(|w, g, m, v| {
                *m = b1 * *m + (1.0 - b1) * *g;
                *v = b2 * *v + (1.0 - b2) * *g * *g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *g = 0.0;
            });
            idx += 1;
        });
    }
}
