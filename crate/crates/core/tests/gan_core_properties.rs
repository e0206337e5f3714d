use nalgebra::DMatrix;
use ndarray::{Array2, Array4, ArrayD, IxDyn};
use privtranslate::data::ImageBatch;
use privtranslate::gan_core::{
    adv_loss_minimax, apply_spectral_norm, build_network, cycle_loss, feature_matching_loss, lsgan_loss,
    siamese_margin_loss_embeddings, travel_loss_embeddings, NetworkKind, NetworkSpec, Parameters,
};
use privtranslate_nn::NamedTensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Largest singular value by a full SVD, independent of power iteration.
fn top_singular(rows: usize, cols: usize, data: &[f32]) -> f64 {
    let m = DMatrix::from_row_iterator(rows, cols, data.iter().map(|&v| v as f64));
    m.singular_values().max()
}

fn normalized_top(rng: &mut ChaCha8Rng, iters: usize) -> f64 {
    let rows = rng.random_range(1..=256);
    let cols = rng.random_range(1..=256);
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let mut p = Parameters::new();
    p.push(NamedTensor { name: "m.weight".into(), shape: vec![rows, cols], trainable: true, data }).unwrap();
    let out = apply_spectral_norm(&p, iters).unwrap();
    top_singular(rows, cols, &out.get("m.weight").unwrap().data)
}

// Power iteration approaches σ₁ from below, so the normalized matrix can only
// be left slightly above 1. Gaussian matrices often have nearly tied leading
// singular values, which slows convergence.
#[test]
fn spectral_norm_never_overshoots_and_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tops: Vec<f64> = (0..100).map(|_| normalized_top(&mut rng, 50)).collect();
    assert!(tops.iter().all(|&s| s >= 1.0 - 1e-5), "{tops:?}");
    let within = tops.iter().filter(|&&s| s <= 1.01).count();
    assert!(within >= 90, "{within}/100 within 1.01");

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let s = normalized_top(&mut rng, 1000);
        assert!((0.99..=1.01).contains(&s), "{s}");
    }
}

fn batch(n: usize, size: usize, seed: u64) -> ImageBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBatch::new(Array4::from_shape_fn((n, size, size, 3), |_| rng.random_range(-1.0f32..1.0))).unwrap()
}

#[test]
fn generator_output_is_bounded_for_wild_inputs() {
    let g = build_network(&NetworkSpec::new(NetworkKind::Generator, 16, 4, 2, 3)).unwrap();
    let x = batch(3, 16, 1).to_tensor() * 1e4;
    assert!(g.infer(&x).iter().all(|v| (-1.0..=1.0).contains(v)));
}

fn floats(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-50.0f32..50.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn adversarial_losses_are_finite(r in floats(1..8), f in floats(1..8)) {
        let m = adv_loss_minimax(&r, &f).unwrap();
        prop_assert!(m.loss_d.is_finite() && m.loss_g.is_finite());
        prop_assert!(m.loss_d >= 0.0 && m.loss_g >= 0.0);
        let l = lsgan_loss(&r, &f).unwrap();
        prop_assert!(l.loss_d.is_finite() && l.loss_g.is_finite());
    }

    #[test]
    fn reconstruction_losses_are_non_negative(a in floats(12..13), b in floats(12..13)) {
        let a = ArrayD::from_shape_vec(IxDyn(&[1, 3, 2, 2]), a).unwrap();
        let b = ArrayD::from_shape_vec(IxDyn(&[1, 3, 2, 2]), b).unwrap();
        let c = cycle_loss(a.view(), b.view()).unwrap().value;
        prop_assert!(c.is_finite() && c >= 0.0);
        prop_assert_eq!(cycle_loss(a.view(), a.view()).unwrap().value, 0.0);
        let (fm, _) = feature_matching_loss(&[a.view()], &[b.view()]).unwrap();
        prop_assert!(fm.is_finite() && fm >= 0.0);
    }

    #[test]
    fn pair_losses_are_non_negative(e in floats(8..9), t in floats(8..9), margin in 0.1f32..20.0) {
        let e = Array2::from_shape_vec((4, 2), e).unwrap();
        let t = Array2::from_shape_vec((4, 2), t).unwrap();
        let tl = travel_loss_embeddings(e.view(), t.view()).unwrap().value;
        prop_assert!(tl.is_finite() && tl >= 0.0);
        let ml = siamese_margin_loss_embeddings(e.view(), margin).unwrap().value;
        prop_assert!(ml.is_finite() && ml >= 0.0);
    }

    #[test]
    fn travel_is_permutation_symmetric(e in floats(10..11), t in floats(10..11), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let e = Array2::from_shape_vec((5, 2), e).unwrap();
        let t = Array2::from_shape_vec((5, 2), t).unwrap();
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pe = e.select(ndarray::Axis(0), &order);
        let pt = t.select(ndarray::Axis(0), &order);
        let a = travel_loss_embeddings(e.view(), t.view()).unwrap().value;
        let b = travel_loss_embeddings(pe.view(), pt.view()).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }

    #[test]
    fn travel_ignores_constant_offsets(e in floats(6..7), off in floats(2..3)) {
        let e = Array2::from_shape_vec((3, 2), e).unwrap();
        let mut t = e.clone();
        for mut row in t.rows_mut() {
            row[0] += off[0];
            row[1] += off[1];
        }
        prop_assert!(travel_loss_embeddings(e.view(), t.view()).unwrap().value < 1e-4);
    }
}
