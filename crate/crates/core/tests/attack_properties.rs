use ndarray::Array4;
use privtranslate::attack::{
    itn_attack, reconstruction_metrics, reidentification_rate, AnalyticVictim, AttackConfig, ReconstructionLoss,
};
use privtranslate::authclass::{Backbone, BackboneProvenance};
use privtranslate::data::{synth_identity_dataset, DomainDataset, ImageBatch};
use privtranslate::gan_core::{build_network, NetworkKind, NetworkSpec};
use privtranslate::trainers::ArchConfig;
use privtranslate::translate::{translate, Translator};
use privtranslate::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn backbone(size: usize) -> Backbone {
    let mut spec = NetworkSpec::new(NetworkKind::Siamese, size, 4, 2, 3);
    spec.latent_size = 8;
    Backbone {
        net: build_network(&spec).unwrap(),
        provenance: BackboneProvenance { task: "none".into(), classes: 0, seed: 3 },
    }
}

fn small_attack(epochs: usize) -> AttackConfig {
    AttackConfig {
        epochs,
        inverse: ArchConfig { base_channels: 8, n_down_blocks: 1, n_res_blocks: 1, ..ArchConfig::default() },
        ..Default::default()
    }
}

#[test]
fn exact_gallery_copies_are_all_reidentified() {
    let gallery = synth_identity_dataset(4, 3, 16, "faceoid", 1).unwrap();
    let r = reidentification_rate(&gallery.images, &gallery, gallery.identity_ids.as_ref().unwrap(), &backbone(16))
        .unwrap();
    assert_eq!(r.rate, 1.0);
    assert_eq!(r.chance, 0.25);
    assert!(!r.degenerate);
}

#[test]
fn single_identity_gallery_is_degenerate() {
    let gallery = synth_identity_dataset(1, 3, 16, "faceoid", 1).unwrap();
    let probe = synth_identity_dataset(2, 2, 16, "faceoid", 2).unwrap().images;
    let r = reidentification_rate(&probe, &gallery, &[0; 4], &backbone(16)).unwrap();
    assert_eq!(r.rate, 1.0);
    assert!(r.degenerate);
}

#[test]
fn empty_gallery_is_rejected() {
    let probe = synth_identity_dataset(1, 2, 16, "faceoid", 2).unwrap().images;
    let empty = DomainDataset::new("faceoid", ImageBatch::empty(16, 16), Some(vec![])).unwrap();
    assert!(matches!(reidentification_rate(&probe, &empty, &[0, 0], &backbone(16)), Err(Error::EmptyGallery)));
    let unlabeled = DomainDataset::new("faceoid", probe.clone(), None).unwrap();
    assert!(matches!(reidentification_rate(&probe, &unlabeled, &[0, 0], &backbone(16)), Err(Error::EmptyGallery)));
}

#[test]
fn noise_reconstructions_are_reidentified_at_chance() {
    let n = 4;
    let gallery = synth_identity_dataset(n, 3, 16, "faceoid", 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = 1200;
    let noise = Array4::from_shape_fn((trials, 16, 16, 3), |_| rng.random_range(-1.0f32..=1.0));
    let true_ids: Vec<u32> = (0..trials).map(|_| rng.random_range(0..n as u32)).collect();
    let r = reidentification_rate(&ImageBatch::new(noise).unwrap(), &gallery, &true_ids, &backbone(16)).unwrap();
    let p = 1.0 / n as f64;
    let band = 4.0 * (p * (1.0 - p) / trials as f64).sqrt();
    assert!((r.rate - p).abs() < band, "rate {} outside {p} ± {band}", r.rate);
}

#[test]
fn itn_inverts_an_affine_victim_and_leaves_it_untouched() {
    let faces = synth_identity_dataset(8, 4, 16, "faceoid", 1).unwrap().images;
    let held = synth_identity_dataset(4, 2, 16, "faceoid", 2).unwrap().images;
    let victim = AnalyticVictim::Affine { scale: [0.5, -0.8, 0.6], offset: [0.25, 0.1, -0.3] };
    let before = victim.fingerprint();
    let inv = itn_attack(&victim, &faces, &small_attack(20)).unwrap();
    assert_eq!(victim.fingerprint(), before);
    assert_eq!(inv.victim_fingerprint, before);
    assert!(inv.epoch_losses.last() < inv.epoch_losses.first());
    let rec = translate(&inv, &translate(&victim, &held).unwrap()).unwrap();
    let m = reconstruction_metrics(&held, &rec).unwrap();
    assert!(m.mse < 0.05, "held-out mse {}", m.mse);
}

#[test]
fn itn_is_seeded_and_supports_l2() {
    let faces = synth_identity_dataset(2, 4, 16, "faceoid", 1).unwrap().images;
    let v = AnalyticVictim::ChannelPermutation([1, 2, 0]);
    let a = itn_attack(&v, &faces, &small_attack(1)).unwrap();
    let b = itn_attack(&v, &faces, &small_attack(1)).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let l2 = AttackConfig { reconstruction_loss: ReconstructionLoss::L2, ..small_attack(1) };
    assert_ne!(itn_attack(&v, &faces, &l2).unwrap().fingerprint(), a.fingerprint());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reconstruction_mse_matches_per_pixel_oracle(
        n in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Array4::from_shape_fn((n, h, w, 3), |_| rng.random_range(-1.0f32..=1.0));
        let (a, b) = (draw(), draw());
        let m = reconstruction_metrics(&ImageBatch::new(a.clone()).unwrap(), &ImageBatch::new(b.clone()).unwrap()).unwrap();
        let mut mean = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for y in 0..h { for x in 0..w { for c in 0..3 {
                s += (a[[i, y, x, c]] as f64 - b[[i, y, x, c]] as f64).powi(2);
            } } }
            let per = s / (h * w * 3) as f64;
            prop_assert!((m.per_image[i].0 - per).abs() < 1e-6);
            mean += per / n as f64;
        }
        prop_assert!((m.mse - mean).abs() < 1e-6);
        prop_assert!(m.mse >= 0.0);
        prop_assert!((-1.0..=1.0).contains(&m.ssim));
    }
}
