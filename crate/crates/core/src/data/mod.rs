//! Image batches, identity datasets, augmentation and fold assignment.

mod augment;
mod io;
mod split;
mod synth;

use ndarray::{s, Array4, Axis};
use privtranslate_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment_identity, augment_plan, AugmentDraw, AugmentParams};
pub use io::{from_u8, load_dataset_dir, load_image_folder, save_dataset, save_grid, to_u8, DatasetManifest};
pub use split::{split_kfold, FoldAssignment};
pub use synth::{synth_identity_dataset, SynthDomain};

/// `count × height × width × 3` images with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pixels: Array4<f32>,
}

impl ImageBatch {
    /// Validates channel count and value range.
    pub fn new(pixels: Array4<f32>) -> Result<Self> {
        let (_, h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::ShapeError(format!("expected 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::ShapeError("zero-sized images".into()));
        }
        if let Some(v) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(ImageBatch { pixels })
    }

    /// Clamps into range instead of rejecting.
    pub fn from_clamped(mut pixels: Array4<f32>) -> Result<Self> {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) });
        Self::new(pixels)
    }

    pub fn empty(height: usize, width: usize) -> Self {
        ImageBatch { pixels: Array4::zeros((0, height, width, 3)) }
    }

    pub fn pixels(&self) -> &Array4<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array4<f32> {
        self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn same_geometry(&self, other: &ImageBatch) -> bool {
        self.height() == other.height() && self.width() == other.width()
    }

    /// NHWC → NCHW network input.
    pub fn to_tensor(&self) -> Tensor {
        self.pixels.view().permuted_axes([0, 3, 1, 2]).as_standard_layout().into_owned()
    }

    /// NCHW network output → batch, clamping into `[-1, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::from_clamped(t.view().permuted_axes([0, 2, 3, 1]).as_standard_layout().into_owned())
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        ImageBatch { pixels: self.pixels.select(Axis(0), indices) }
    }

    pub fn slice(&self, start: usize, end: usize) -> ImageBatch {
        ImageBatch { pixels: self.pixels.slice(s![start..end, .., .., ..]).to_owned() }
    }

    pub fn concat(batches: &[&ImageBatch]) -> Result<ImageBatch> {
        let first = batches.first().ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        if batches.iter().any(|b| !b.same_geometry(first)) {
            return Err(Error::ShapeError("concatenating batches of different sizes".into()));
        }
        let views: Vec<_> = batches.iter().map(|b| b.pixels.view()).collect();
        let pixels = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeError(e.to_string()))?;
        Ok(ImageBatch { pixels })
    }
}

/// Images from one domain, optionally labelled with identities.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_tag: String,
    pub images: ImageBatch,
    pub identity_ids: Option<Vec<u32>>,
    /// Files that could not be decoded during ingestion.
    pub skipped_files: usize,
    pub seed: Option<u64>,
}

impl DomainDataset {
    pub fn new(domain_tag: impl Into<String>, images: ImageBatch, identity_ids: Option<Vec<u32>>) -> Result<Self> {
        if let Some(ids) = &identity_ids {
            if ids.len() != images.len() {
                return Err(Error::ShapeError(format!("{} identity ids for {} images", ids.len(), images.len())));
            }
        }
        Ok(DomainDataset { domain_tag: domain_tag.into(), images, identity_ids, skipped_files: 0, seed: None })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sorted distinct identities.
    pub fn identities(&self) -> Vec<u32> {
        let mut ids = self.identity_ids.clone().unwrap_or_default();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Indices of the images belonging to `identity`, in dataset order.
    pub fn indices_of(&self, identity: u32) -> Vec<usize> {
        self.identity_ids
            .as_ref()
            .map(|ids| ids.iter().enumerate().filter(|(_, id)| **id == identity).map(|(i, _)| i).collect())
            .unwrap_or_default()
    }

    pub fn subset(&self, indices: &[usize]) -> DomainDataset {
        DomainDataset {
            domain_tag: self.domain_tag.clone(),
            images: self.images.select(indices),
            identity_ids: self.identity_ids.as_ref().map(|ids| indices.iter().map(|&i| ids[i]).collect()),
            skipped_files: 0,
            seed: self.seed,
        }
    }
}

/// Serializable summary used by reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSummary {
    pub domain_tag: String,
    pub count: usize,
    pub size: usize,
    pub identities: usize,
}

impl From<&DomainDataset> for DatasetSummary {
    fn from(d: &DomainDataset) -> Self {
        DatasetSummary {
            domain_tag: d.domain_tag.clone(),
            count: d.len(),
            size: d.images.height(),
            identities: d.identities().len(),
        }
    }
}
