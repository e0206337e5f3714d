use log::warn;
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::backbone::Backbone;
use super::classifier::{accepts, train_on, Samples};
use super::metrics::{Confusion, FoldScores, IdentityScores, MetricsReport};
use super::{BackboneMode, ClassifierConfig};
use crate::data::{DomainDataset, FoldAssignment, ImageBatch};
use crate::error::{Error, Result};
use crate::seeds::mix_seed;

/// Seed path of the negative-pool fold split.
const POOL_SALT: u64 = 0x9e6_0001;

/// k-fold evaluation of one binary classifier per identity.
///
/// Each identity's images are split into `k` folds. The negative pool is
/// split into `k` folds once; fold `f` trains on every other pool fold and
/// tests on pool fold `f`, so no negative is both trained and tested on.
/// Identities run in parallel on the current rayon pool; every task is
/// seeded by `(seed, identity, fold)`, so results do not depend on the pool
/// size.
pub fn crossval_experiment(
    backbone: &Backbone,
    identities: &DomainDataset,
    negative_pool: &ImageBatch,
    k: usize,
    config: &ClassifierConfig,
    label: &str,
) -> Result<MetricsReport> {
    config.validate()?;
    backbone.check(&identities.images)?;
    backbone.check(negative_pool)?;
    if negative_pool.len() < k {
        return Err(Error::TooFewSamples(format!("negative pool of {} for {k} folds", negative_pool.len())));
    }
    let pool_folds = FoldAssignment::balanced(negative_pool.len(), k, mix_seed(config.seed, &[POOL_SALT]))?;
    let frozen = config.backbone_mode == BackboneMode::Frozen;
    let (id_feats, pool_feats) = if frozen {
        (Some(backbone.features(&identities.images)?), Some(backbone.features(negative_pool)?))
    } else {
        (None, None)
    };

    let mut usable = Vec::new();
    let mut skipped = Vec::new();
    for id in identities.identities() {
        let idx = identities.indices_of(id);
        if idx.len() < k {
            warn!("identity {id} has {} images, fewer than {k} folds; skipped", idx.len());
            skipped.push(id);
        } else {
            usable.push((id, idx));
        }
    }
    if usable.is_empty() {
        return Err(Error::TooFewSamples(format!("no identity has at least {k} images")));
    }

    let rows = |m: &Option<Array2<f32>>, idx: &[usize]| m.as_ref().map(|f| f.select(Axis(0), idx));
    let scores: Vec<IdentityScores> = usable
        .par_iter()
        .map(|(id, idx)| -> Result<IdentityScores> {
            let folds = FoldAssignment::balanced(idx.len(), k, mix_seed(config.seed, &[*id as u64, 1]))?;
            let mut out = Vec::with_capacity(k);
            for f in 0..k {
                let pick = |local: Vec<usize>| -> Vec<usize> { local.into_iter().map(|i| idx[i]).collect() };
                let (train_pos, test_pos) = (pick(folds.train_indices(f)), pick(folds.test_indices(f)));
                let (train_neg, test_neg) = (pool_folds.train_indices(f), pool_folds.test_indices(f));
                let fold_config =
                    ClassifierConfig { seed: mix_seed(config.seed, &[*id as u64, f as u64, 2]), ..config.clone() };
                let (p_test, n_test) = if frozen {
                    let (tp, tn) = (rows(&id_feats, &train_pos).unwrap(), rows(&pool_feats, &train_neg).unwrap());
                    let clf = train_on(backbone, Samples::Features(&tp), Samples::Features(&tn), &fold_config)?;
                    (
                        clf.probabilities_from_features(&rows(&id_feats, &test_pos).unwrap()),
                        clf.probabilities_from_features(&rows(&pool_feats, &test_neg).unwrap()),
                    )
                } else {
                    let (tp, tn) = (identities.images.select(&train_pos), negative_pool.select(&train_neg));
                    let clf = train_on(backbone, Samples::Images(&tp), Samples::Images(&tn), &fold_config)?;
                    (
                        clf.probabilities(&identities.images.select(&test_pos))?,
                        clf.probabilities(&negative_pool.select(&test_neg))?,
                    )
                };
                let decisions: Vec<(bool, bool)> = p_test
                    .iter()
                    .map(|&p| (accepts(p, config.threshold), true))
                    .chain(n_test.iter().map(|&p| (accepts(p, config.threshold), false)))
                    .collect();
                let confusion = Confusion::from_decisions(&decisions);
                out.push(FoldScores { fold: f, confusion, metrics: confusion.metrics() });
            }
            Ok(IdentityScores::new(*id, out))
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport::new(label, config.backbone_mode, k, config.threshold, scores, skipped))
}
