//! Central finite-difference checks of every loss gradient.
//!
//! Each coordinate is perturbed by `±h` in `f32`; the realised step
//! `x₊ − x₋` is used as the denominator so rounding of the perturbed input
//! does not bias the quotient. Losses are evaluated in `f64`.

#![allow(dead_code)]

use ndarray::{Array2, ArrayD, IxDyn};
use privtranslate::gan_core::{
    adv_loss_minimax, cycle_loss, feature_matching_loss, lsgan_loss, mse_loss, siamese_margin_loss_embeddings,
    travel_loss_embeddings, wasserstein_loss,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRIALS: usize = 50;
pub const REL_TOL: f64 = 1e-3;
const ABS_FLOOR: f64 = 1e-6;
const H: f32 = 1e-3;

fn fd(x: &[f32], i: usize, f: &dyn Fn(&[f32]) -> f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] = x[i] + H;
    m[i] = x[i] - H;
    (f(&p) - f(&m)) / (p[i] as f64 - m[i] as f64)
}

/// Compare `analytic` against finite differences of `f` at `x`.
/// Returns the worst relative error.
fn compare(x: &[f32], analytic: &[f32], f: &dyn Fn(&[f32]) -> f64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let num = fd(x, i, f);
        let an = analytic[i] as f64;
        let err = (num - an).abs();
        let scale = num.abs().max(an.abs());
        if err > REL_TOL * scale + ABS_FLOOR {
            return Err(format!("coordinate {i}: finite difference {num:.8e}, analytic {an:.8e}"));
        }
        if scale > 0.0 {
            worst = worst.max(err / scale);
        }
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

type Check = fn(&mut ChaCha8Rng) -> Result<f64, String>;

fn minimax(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (nr, nf) = (rng.random_range(1..6), rng.random_range(1..6));
    let r = uniform(rng, nr, -4.0, 4.0);
    let f = uniform(rng, nf, -4.0, 4.0);
    let l = adv_loss_minimax(&r, &f).map_err(|e| e.to_string())?;
    let a = compare(&r, &l.grad_d_real, &|x| adv_loss_minimax(x, &f).unwrap().loss_d)?;
    let b = compare(&f, &l.grad_d_fake, &|x| adv_loss_minimax(&r, x).unwrap().loss_d)?;
    let c = compare(&f, &l.grad_g_fake, &|x| adv_loss_minimax(&r, x).unwrap().loss_g)?;
    Ok(a.max(b).max(c))
}

fn lsgan(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let r = uniform(rng, 4, -2.0, 2.0);
    let f = uniform(rng, 3, -2.0, 2.0);
    let l = lsgan_loss(&r, &f).map_err(|e| e.to_string())?;
    let a = compare(&r, &l.grad_d_real, &|x| lsgan_loss(x, &f).unwrap().loss_d)?;
    let b = compare(&f, &l.grad_d_fake, &|x| lsgan_loss(&r, x).unwrap().loss_d)?;
    let c = compare(&f, &l.grad_g_fake, &|x| lsgan_loss(&r, x).unwrap().loss_g)?;
    Ok(a.max(b).max(c))
}

fn wasserstein(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let r = uniform(rng, 5, -3.0, 3.0);
    let f = uniform(rng, 2, -3.0, 3.0);
    let l = wasserstein_loss(&r, &f).map_err(|e| e.to_string())?;
    let a = compare(&r, &l.grad_d_real, &|x| wasserstein_loss(x, &f).unwrap().loss_d)?;
    let b = compare(&f, &l.grad_d_fake, &|x| wasserstein_loss(&r, x).unwrap().loss_d)?;
    let c = compare(&f, &l.grad_g_fake, &|x| wasserstein_loss(&r, x).unwrap().loss_g)?;
    Ok(a.max(b).max(c))
}

fn dyn_view(v: &[f32], shape: &[usize]) -> ArrayD<f32> {
    ArrayD::from_shape_vec(IxDyn(shape), v.to_vec()).unwrap()
}

/// Draw a reconstruction whose entries stay at least 0.05 from the originals
/// so the L1 kink is never crossed.
fn away_from(rng: &mut ChaCha8Rng, o: &[f32]) -> Vec<f32> {
    o.iter()
        .map(|&v| loop {
            let r = rng.random_range(-1.0f32..1.0);
            if (r - v).abs() > 0.05 {
                break r;
            }
        })
        .collect()
}

fn cycle(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let shape = [2, 3, 2, 2];
    let o = uniform(rng, 24, -1.0, 1.0);
    let r = away_from(rng, &o);
    let od = dyn_view(&o, &shape);
    let l = cycle_loss(od.view(), dyn_view(&r, &shape).view()).map_err(|e| e.to_string())?;
    compare(&r, l.grad.as_slice().unwrap(), &|x| cycle_loss(od.view(), dyn_view(x, &shape).view()).unwrap().value)
}

fn mse(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let shape = [2, 3, 2, 2];
    let o = uniform(rng, 24, -1.0, 1.0);
    let r = uniform(rng, 24, -1.0, 1.0);
    let od = dyn_view(&o, &shape);
    let l = mse_loss(od.view(), dyn_view(&r, &shape).view()).map_err(|e| e.to_string())?;
    compare(&r, l.grad.as_slice().unwrap(), &|x| mse_loss(od.view(), dyn_view(x, &shape).view()).unwrap().value)
}

fn feature_matching(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let shapes = [vec![3usize, 2, 2, 2], vec![3, 4, 1, 1]];
    let real: Vec<ArrayD<f32>> =
        shapes.iter().map(|s| dyn_view(&uniform(rng, s.iter().product(), -1.0, 1.0), s)).collect();
    let fake: Vec<Vec<f32>> = shapes.iter().map(|s| uniform(rng, s.iter().product(), -1.0, 1.0)).collect();
    let fake_arrays: Vec<ArrayD<f32>> = fake.iter().zip(&shapes).map(|(v, s)| dyn_view(v, s)).collect();
    let rv: Vec<_> = real.iter().map(|a| a.view()).collect();
    let fv: Vec<_> = fake_arrays.iter().map(|a| a.view()).collect();
    let (_, grads) = feature_matching_loss(&rv, &fv).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for layer in 0..shapes.len() {
        let f = |x: &[f32]| {
            let mut arrays = fake_arrays.clone();
            arrays[layer] = dyn_view(x, &shapes[layer]);
            let fv: Vec<_> = arrays.iter().map(|a| a.view()).collect();
            feature_matching_loss(&rv, &fv).unwrap().0
        };
        worst = worst.max(compare(&fake[layer], grads[layer].as_slice().unwrap(), &f)?);
    }
    Ok(worst)
}

fn travel(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (n, d) = (rng.random_range(2..5), 3);
    let a = uniform(rng, n * d, -1.0, 1.0);
    let b = uniform(rng, n * d, -1.0, 1.0);
    let m = |v: &[f32]| Array2::from_shape_vec((n, d), v.to_vec()).unwrap();
    let l = travel_loss_embeddings(m(&a).view(), m(&b).view()).map_err(|e| e.to_string())?;
    let x = compare(&a, l.grad_inputs.as_slice().unwrap(), &|v| {
        travel_loss_embeddings(m(v).view(), m(&b).view()).unwrap().value
    })?;
    let y = compare(&b, l.grad_translated.as_slice().unwrap(), &|v| {
        travel_loss_embeddings(m(&a).view(), m(v).view()).unwrap().value
    })?;
    Ok(x.max(y))
}

fn margin(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (n, d) = (4, 3);
    let margin = 1.2f32;
    // Resample until no pair distance sits within 0.05 of the hinge.
    let e = loop {
        let e = uniform(rng, n * d, -1.0, 1.0);
        let near_kink = (0..n).any(|i| {
            (i + 1..n).any(|j| {
                let dist: f32 = (0..d).map(|k| (e[i * d + k] - e[j * d + k]).powi(2)).sum::<f32>().sqrt();
                (dist - margin).abs() < 0.05
            })
        });
        if !near_kink {
            break e;
        }
    };
    let m = |v: &[f32]| Array2::from_shape_vec((n, d), v.to_vec()).unwrap();
    let l = siamese_margin_loss_embeddings(m(&e).view(), margin).map_err(|e| e.to_string())?;
    compare(&e, l.grad.as_slice().unwrap(), &|v| siamese_margin_loss_embeddings(m(v).view(), margin).unwrap().value)
}

/// `(loss name, worst relative error over all trials)` or the first failure.
pub fn run_all(seed: u64) -> Vec<(&'static str, Result<f64, String>)> {
    let checks: [(&str, Check); 8] = [
        ("adv_minimax", minimax),
        ("lsgan", lsgan),
        ("wasserstein", wasserstein),
        ("cycle_l1", cycle),
        ("mse", mse),
        ("feature_matching", feature_matching),
        ("travel", travel),
        ("siamese_margin", margin),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(k, (name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64) << 32);
            let mut worst = 0.0f64;
            for trial in 0..TRIALS {
                match check(&mut rng) {
                    Ok(w) => worst = worst.max(w),
                    Err(e) => return (*name, Err(format!("trial {trial}: {e}"))),
                }
            }
            (*name, Ok(worst))
        })
        .collect()
}
