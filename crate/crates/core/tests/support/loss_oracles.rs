//! Hand-computed values for every loss, shared by the loss tests and the
//! acceptance suite. Each oracle is worked out independently of the
//! implementation.

#![allow(dead_code)]

use ndarray::{arr2, Array2, Array4, ArrayD, IxDyn};
use privtranslate::gan_core::{
    adv_loss_minimax, cycle_loss, feature_matching_loss, gradient_penalty_at, lsgan_loss, margin_hinge_mean,
    siamese_margin_loss_embeddings, travel_loss_embeddings, Critic,
};
use privtranslate_nn::Tensor;

pub const TOL: f64 = 1e-6;

fn close(name: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= TOL {
        Ok(())
    } else {
        Err(format!("{name}: got {got:.9}, expected {want:.9}"))
    }
}

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn minimax() -> Result<(), String> {
    let sym = adv_loss_minimax(&[0.0], &[0.0]).map_err(|e| e.to_string())?;
    close("symmetric loss_d", sym.loss_d, 2.0 * 2f64.ln())?;
    close("symmetric loss_g", sym.loss_g, 2f64.ln())?;
    let l = adv_loss_minimax(&[1.0], &[-1.0]).map_err(|e| e.to_string())?;
    close("±1 loss_d", l.loss_d, -sigma(1.0).ln() - (1.0 - sigma(-1.0)).ln())?;
    close("±1 loss_d, rounded by hand", l.loss_d, 0.626_523_8)?;
    let far = adv_loss_minimax(&[40.0], &[-40.0]).map_err(|e| e.to_string())?;
    close("perfect discriminator", far.loss_d, 0.0)
}

fn lsgan() -> Result<(), String> {
    close("lsgan exact labels", lsgan_loss(&[1.0], &[0.0]).map_err(|e| e.to_string())?.loss_d, 0.0)?;
    close("lsgan fooled", lsgan_loss(&[0.3], &[1.0]).map_err(|e| e.to_string())?.loss_g, 0.0)?;
    let half = lsgan_loss(&[0.5], &[0.5]).map_err(|e| e.to_string())?;
    close("lsgan half loss_d", half.loss_d, 0.25)?;
    close("lsgan half loss_g", half.loss_g, 0.125)
}

fn cycle() -> Result<(), String> {
    let x = ArrayD::from_shape_vec(IxDyn(&[2, 3, 4, 4]), (0..96).map(|i| (i as f32 / 48.0) - 1.0).collect()).unwrap();
    close("cycle identity", cycle_loss(x.view(), x.view()).map_err(|e| e.to_string())?.value, 0.0)?;
    let zeros = ArrayD::<f32>::zeros(IxDyn(&[2, 3, 4, 4]));
    let ones = ArrayD::<f32>::ones(IxDyn(&[2, 3, 4, 4]));
    close("cycle constant gap", cycle_loss(zeros.view(), ones.view()).map_err(|e| e.to_string())?.value, 1.0)?;
    let a = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![0.0f32, 1.0, 1.0, 0.0]).unwrap();
    let b = ArrayD::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0f32, 1.0, 0.0, 0.0]).unwrap();
    close("cycle 2×2", cycle_loss(a.view(), b.view()).map_err(|e| e.to_string())?.value, 0.5)
}

fn feature_matching() -> Result<(), String> {
    let fm = |real: &[ArrayD<f32>], fake: &[ArrayD<f32>]| -> Result<f64, String> {
        let r: Vec<_> = real.iter().map(|a| a.view()).collect();
        let f: Vec<_> = fake.iter().map(|a| a.view()).collect();
        feature_matching_loss(&r, &f).map(|(v, _)| v).map_err(|e| e.to_string())
    };
    let layer = |v: Vec<f32>| ArrayD::from_shape_vec(IxDyn(&[v.len(), 1]), v).unwrap();
    let same = [layer(vec![1.0, 2.0]), layer(vec![-3.0, 0.5])];
    close("fm identical", fm(&same, &same)?, 0.0)?;
    close("fm scalar means", fm(&[layer(vec![0.0, 0.0])], &[layer(vec![3.0, 3.0])])?, 3.0)?;
    let real = [layer(vec![0.0, 0.0]), layer(vec![1.0, 1.0])];
    let fake = [layer(vec![3.0, 3.0]), layer(vec![5.0, 5.0])];
    close("fm two layers", fm(&real, &fake)?, 7.0)
}

/// `D(x) = w·x` on single-image tensors.
struct Linear(Vec<f32>);

impl Critic for Linear {
    fn critic_values(&mut self, x: &Tensor) -> Vec<f32> {
        x.outer_iter().map(|s| s.iter().zip(&self.0).map(|(a, b)| a * b).sum()).collect()
    }

    fn input_gradient(&mut self, x: &Tensor) -> Option<Tensor> {
        let per: Vec<f32> = self.0.clone();
        Some(Array4::from_shape_fn(x.raw_dim(), |(_, c, h, w)| per[(c * x.dim().2 + h) * x.dim().3 + w]))
    }
}

fn penalty() -> Result<(), String> {
    let gp = |w: Vec<f32>, shape: (usize, usize, usize, usize)| -> Result<f64, String> {
        let x = Array4::from_elem(shape, 0.3f32);
        gradient_penalty_at(&mut Linear(w), &x, 10.0).map(|p| p.value).map_err(|e| e.to_string())
    };
    close("gp unit norm", gp(vec![1.0], (1, 1, 1, 1))?, 0.0)?;
    close("gp slope 2", gp(vec![2.0], (1, 1, 1, 1))?, 10.0)?;
    close("gp weights (1,2,2)", gp(vec![1.0, 2.0, 2.0], (1, 3, 1, 1))?, 40.0)
}

fn travel() -> Result<(), String> {
    let e = arr2(&[[0.5f32, -1.0, 2.0], [1.5, 0.0, -0.5], [0.0, 2.0, 1.0]]);
    close("travel identity", travel_loss_embeddings(e.view(), e.view()).map_err(|x| x.to_string())?.value, 0.0)?;
    let shifted = &e + &arr2(&[[3.0f32, -2.0, 0.5]]);
    close("travel offset", travel_loss_embeddings(e.view(), shifted.view()).map_err(|x| x.to_string())?.value, 0.0)?;
    // v₀₁ = (1, 0) before and v′₀₁ = (0, 1) after translation: cosine term
    // 1 − 0, distance term √2. The reversed pair contributes the same.
    let a: Array2<f32> = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
    let b: Array2<f32> = arr2(&[[0.0, 1.0], [0.0, 0.0]]);
    close(
        "travel orthogonal",
        travel_loss_embeddings(a.view(), b.view()).map_err(|x| x.to_string())?.value,
        1.0 + 2f64.sqrt(),
    )
}

fn margin() -> Result<(), String> {
    let far = arr2(&[[0.0f32, 0.0], [20.0, 0.0]]);
    close("margin satisfied", siamese_margin_loss_embeddings(far.view(), 10.0).map_err(|e| e.to_string())?.value, 0.0)?;
    let same = arr2(&[[1.0f32, 2.0], [1.0, 2.0]]);
    close(
        "margin collapsed",
        siamese_margin_loss_embeddings(same.view(), 10.0).map_err(|e| e.to_string())?.value,
        10.0,
    )?;
    close("hinge {4, 12}", margin_hinge_mean(&[4.0, 12.0], 10.0), 3.0)?;
    // Three collinear embeddings with pair distances 4, 12 and 8.
    let line = arr2(&[[0.0f32, 0.0], [4.0, 0.0], [-8.0, 0.0]]);
    let want = ((10.0 - 4.0) + 0.0 + (10.0 - 8.0)) / 3.0;
    close(
        "margin three points",
        siamese_margin_loss_embeddings(line.view(), 10.0).map_err(|e| e.to_string())?.value,
        want,
    )
}

pub fn run_all() -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("adv_loss_minimax", minimax()),
        ("lsgan_loss", lsgan()),
        ("cycle_loss", cycle()),
        ("feature_matching_loss", feature_matching()),
        ("gradient_penalty", penalty()),
        ("travel_loss", travel()),
        ("siamese_margin_loss", margin()),
    ]
}
