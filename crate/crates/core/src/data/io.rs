use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageReader, RgbImage};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::{DomainDataset, ImageBatch};
use crate::error::{Error, Result};

/// `v / 127.5 - 1`
pub fn from_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn sorted_image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn rgb_to_pixels(img: &RgbImage, out: &mut Array4<f32>, index: usize) {
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[index, y as usize, x as usize, c]] = from_u8(px[c]);
        }
    }
}

/// Decode every PNG/JPEG in `path` (lexicographic order), resize to
/// `size×size` RGB and rescale to `[-1, 1]`. Undecodable files are counted in
/// `skipped_files`.
pub fn load_image_folder(path: &Path, size: usize, domain_tag: &str) -> Result<DomainDataset> {
    if !path.is_dir() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("size must be positive".into()));
    }
    let mut decoded = Vec::new();
    let mut skipped = 0;
    for file in sorted_image_files(path)? {
        let img = ImageReader::open(&file)
            .map_err(Error::from)
            .and_then(|r| r.with_guessed_format().map_err(Error::from))
            .and_then(|r| r.decode().map_err(Error::from));
        match img {
            Ok(img) => {
                let rgb = img.to_rgb8();
                let rgb = if rgb.width() as usize == size && rgb.height() as usize == size {
                    rgb
                } else {
                    image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle)
                };
                decoded.push(rgb);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", file.display());
                skipped += 1;
            }
        }
    }
    if decoded.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let mut pixels = Array4::zeros((decoded.len(), size, size, 3));
    for (i, img) in decoded.iter().enumerate() {
        rgb_to_pixels(img, &mut pixels, i);
    }
    let mut ds = DomainDataset::new(domain_tag, ImageBatch::new(pixels)?, None)?;
    ds.skipped_files = skipped;
    Ok(ds)
}

fn batch_image(batch: &ImageBatch, i: usize) -> RgbImage {
    let (h, w) = (batch.height(), batch.width());
    let px = batch.pixels();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| to_u8(px[[i, y as usize, x as usize, c]])))
    })
}

/// `manifest.json` written next to a dataset's PNG files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub domain_tag: String,
    pub size: usize,
    pub count: usize,
    pub identity_ids: Option<Vec<u32>>,
    pub seed: Option<u64>,
}

pub fn save_dataset(ds: &DomainDataset, dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    for i in 0..ds.len() {
        batch_image(&ds.images, i).save(dir.join(format!("{i:05}.png")))?;
    }
    let manifest = DatasetManifest {
        domain_tag: ds.domain_tag.clone(),
        size: ds.images.height(),
        count: ds.len(),
        identity_ids: ds.identity_ids.clone(),
        seed: ds.seed,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reload a directory written by [`save_dataset`].
pub fn load_dataset_dir(dir: &Path) -> Result<DomainDataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::NotFound(manifest_path));
    }
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let mut ds = load_image_folder(dir, manifest.size, &manifest.domain_tag)?;
    if ds.len() != manifest.count {
        return Err(Error::ShapeError(format!("manifest lists {} images, found {}", manifest.count, ds.len())));
    }
    ds = DomainDataset::new(manifest.domain_tag, ds.images, manifest.identity_ids)?;
    ds.seed = manifest.seed;
    Ok(ds)
}

/// Write a grid PNG: one column per batch, one row per image index.
pub fn save_grid(columns: &[&ImageBatch], path: &Path) -> Result<()> {
    let first = columns.first().ok_or_else(|| Error::InvalidArgument("grid needs at least one column".into()))?;
    let rows = columns.iter().map(|c| c.len()).min().unwrap_or(0);
    let (h, w) = (first.height() as u32, first.width() as u32);
    let gap = 2u32;
    let mut canvas = RgbImage::from_pixel(
        columns.len() as u32 * (w + gap),
        (rows as u32).max(1) * (h + gap),
        image::Rgb([255, 255, 255]),
    );
    for (ci, col) in columns.iter().enumerate() {
        for r in 0..rows {
            let img = batch_image(col, r);
            image::imageops::replace(&mut canvas, &img, (ci as u32 * (w + gap)) as i64, (r as u32 * (h + gap)) as i64);
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    canvas.save(path)?;
    Ok(())
}
