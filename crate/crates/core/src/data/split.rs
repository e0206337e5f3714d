use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_index_per_image: Vec<usize>,
}

impl FoldAssignment {
    /// Seeded round-robin assignment of `n` items.
    pub fn balanced(n: usize, k: usize, seed: u64) -> Result<Self> {
        check_k(k)?;
        if n < k {
            return Err(Error::TooFewGroups { k, needed: k, found: n });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut folds = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            folds[i] = pos % k;
        }
        Ok(FoldAssignment { k, fold_index_per_image: folds })
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        self.indices(|f| f == fold)
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.indices(|f| f != fold)
    }

    fn indices(&self, keep: impl Fn(usize) -> bool) -> Vec<usize> {
        self.fold_index_per_image.iter().enumerate().filter(|(_, f)| keep(**f)).map(|(i, _)| i).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_index_per_image {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    Ok(())
}

/// Assign every image to one of `k` folds. With `group_by_identity` whole
/// identities are assigned, so no identity spans two folds.
pub fn split_kfold(dataset: &DomainDataset, k: usize, group_by_identity: bool, seed: u64) -> Result<FoldAssignment> {
    check_k(k)?;
    if !group_by_identity {
        return FoldAssignment::balanced(dataset.len(), k, seed);
    }
    let ids = dataset
        .identity_ids
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("grouped split needs identity ids".into()))?;
    let groups = dataset.identities();
    if groups.len() < k {
        return Err(Error::TooFewGroups { k, needed: k, found: groups.len() });
    }
    let group_folds = FoldAssignment::balanced(groups.len(), k, seed)?;
    let fold_of = |id: u32| {
        let pos = groups.binary_search(&id).expect("identity listed");
        group_folds.fold_index_per_image[pos]
    };
    Ok(FoldAssignment { k, fold_index_per_image: ids.iter().map(|&id| fold_of(id)).collect() })
}
