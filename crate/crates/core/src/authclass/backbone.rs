use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use privtranslate_nn::{Adam, Linear, Module, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, ImageBatch};
use crate::error::{Error, Result};
use crate::gan_core::{
    build_network, flatten, load_networks, save_networks, unflatten, Network, NetworkKind, NetworkSpec,
};
use crate::seeds::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub embedding_dim: usize,
    pub base_channels: usize,
    pub n_down_blocks: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            embedding_dim: 32,
            base_channels: 16,
            n_down_blocks: 5,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneProvenance {
    /// Domain tag of the auxiliary classification task.
    pub task: String,
    pub classes: usize,
    pub seed: u64,
}

/// Convolutional feature extractor; its classification head is discarded
/// after pretraining.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub net: Network,
    pub provenance: BackboneProvenance,
}

impl Backbone {
    pub fn embedding_dim(&self) -> usize {
        self.net.spec.latent_size
    }

    pub fn input_size(&self) -> usize {
        self.net.spec.input_size
    }

    /// `N × embedding_dim` features.
    pub fn features(&self, images: &ImageBatch) -> Result<Array2<f32>> {
        self.check(images)?;
        if images.is_empty() {
            return Ok(Array2::zeros((0, self.embedding_dim())));
        }
        let x = images.to_tensor();
        let rows: Vec<Array2<f32>> = (0..images.len())
            .step_by(64)
            .map(|s| {
                let e = (s + 64).min(images.len());
                self.net.embed(&x.slice(ndarray::s![s..e, .., .., ..]).to_owned())
            })
            .collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }

    pub fn check(&self, images: &ImageBatch) -> Result<()> {
        let s = self.input_size();
        if images.height() != s || images.width() != s {
            return Err(Error::ShapeError(format!(
                "backbone expects {s}×{s} images, got {}×{}",
                images.height(),
                images.width()
            )));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        self.net.fingerprint()
    }
}

/// Softmax cross-entropy and its gradient with respect to the logits.
fn softmax_xent(logits: &Array2<f32>, labels: &[usize]) -> (f64, Array2<f32>) {
    let n = logits.nrows() as f32;
    let mut grad = logits.clone();
    let mut loss = 0.0f64;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z: f32 = row.sum();
        row.mapv_inplace(|v| v / z);
        loss -= (row[y].max(1e-12) as f64).ln();
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }
    (loss / n as f64, grad)
}

/// Train a small CNN to classify the identities of `aux` and keep its
/// feature extractor.
pub fn pretrain_backbone(aux: &DomainDataset, config: &BackboneConfig, seed: u64) -> Result<Backbone> {
    let classes = aux.identities();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses(classes.len()));
    }
    if config.epochs < 1 || config.batch_size < 1 || config.embedding_dim < 1 {
        return Err(Error::InvalidConfig("backbone epochs, batch_size and embedding_dim must be positive".into()));
    }
    let index: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let labels: Vec<usize> = aux.identity_ids.as_ref().expect("identities checked").iter().map(|c| index[c]).collect();
    let size = aux.images.height();
    let mut spec =
        NetworkSpec::new(NetworkKind::Siamese, size, config.base_channels, config.n_down_blocks, mix_seed(seed, &[1]));
    spec.latent_size = config.embedding_dim;
    spec.max_channels = spec.max_channels.max(config.base_channels * 4);
    let mut net = build_network(&spec)?;
    let mut head_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[2]));
    let mut head = Linear::new(config.embedding_dim, classes.len(), &mut head_rng);
    let mut opt_net = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut opt_head = Adam::new(config.learning_rate, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[3]));
    let x_all = aux.images.to_tensor();
    let mut order: Vec<usize> = (0..aux.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x: Tensor = x_all.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let emb = net.forward(&x);
            let logits = head.forward(&emb);
            let (loss, grad) = softmax_xent(&flatten(&logits), &y);
            total += loss * chunk.len() as f64;
            let g_emb = head.backward(&unflatten(grad));
            net.backward(&g_emb);
            opt_head.step(&mut head);
            opt_net.step(&mut net.body);
        }
        log::debug!("backbone epoch {epoch}: loss {:.4}", total / aux.len() as f64);
    }
    if !net.all_finite() {
        return Err(Error::NonFinite { step: opt_net.steps() as u64, network: "backbone".into() });
    }
    Ok(Backbone { net, provenance: BackboneProvenance { task: aux.domain_tag.clone(), classes: classes.len(), seed } })
}

pub fn save_backbone(backbone: &Backbone, dir: &Path) -> Result<()> {
    save_networks(dir, &[("backbone", &backbone.net)], serde_json::to_value(&backbone.provenance)?)
}

pub fn load_backbone(dir: &Path) -> Result<Backbone> {
    let (mut nets, extra) = load_networks(dir)?;
    let corrupt = |reason: &str| Error::CorruptCheckpoint { path: dir.to_path_buf(), reason: reason.into() };
    let provenance = serde_json::from_value(extra).map_err(|_| corrupt("missing backbone provenance"))?;
    match nets.pop() {
        Some((role, net)) if role == "backbone" && nets.is_empty() => Ok(Backbone { net, provenance }),
        _ => Err(corrupt("expected exactly one backbone network")),
    }
}
