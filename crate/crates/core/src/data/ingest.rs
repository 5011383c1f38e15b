use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Folder preprocessing: downscale so the longer side hits `long_side`,
/// drop images that would not shrink by at least `min_downscale` or that
/// are too saturated or bright on average, then take a seeded random crop.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestSpec {
    pub dir: PathBuf,
    pub long_side: u32,
    pub min_downscale: f64,
    pub max_saturation: f64,
    pub max_value: f64,
    pub crop: u32,
    pub seed: u64,
}

impl IngestSpec {
    pub fn new(dir: impl Into<PathBuf>, crop: u32) -> Self {
        Self {
            dir: dir.into(),
            long_side: 768,
            min_downscale: 1.25,
            max_saturation: 0.9,
            max_value: 0.8,
            crop,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Discard {
    /// Would not be downscaled enough, or is smaller than the crop.
    TooSmall,
    /// Average saturation or value above the cap.
    Colour,
}

/// Size after scaling the longer side to `long_side`.
pub fn rescaled_dims(width: u32, height: u32, long_side: u32) -> (u32, u32) {
    let long = width.max(height) as f64;
    let f = long_side as f64 / long;
    let scale = |v: u32| ((v as f64 * f).round() as u32).max(1);
    if width >= height {
        (long_side, scale(height))
    } else {
        (scale(width), long_side)
    }
}

/// Mean HSV saturation and value, both in `[0, 1]`.
pub fn mean_saturation_value(img: &RgbImage) -> (f64, f64) {
    let n = (img.width() * img.height()).max(1) as f64;
    let (mut s, mut v) = (0.0, 0.0);
    for p in img.pixels() {
        let max = *p.0.iter().max().unwrap() as f64;
        let min = *p.0.iter().min().unwrap() as f64;
        v += max / 255.0;
        if max > 0.0 {
            s += (max - min) / max;
        }
    }
    (s / n, v / n)
}

pub fn preprocess(img: &RgbImage, spec: &IngestSpec, rng: &mut impl Rng) -> std::result::Result<RgbImage, Discard> {
    let long = img.width().max(img.height());
    if (long as f64) < spec.long_side as f64 * spec.min_downscale {
        return Err(Discard::TooSmall);
    }
    let (w, h) = rescaled_dims(img.width(), img.height(), spec.long_side);
    let scaled = imageops::resize(img, w, h, FilterType::Triangle);
    let (s, v) = mean_saturation_value(&scaled);
    if s > spec.max_saturation || v > spec.max_value {
        return Err(Discard::Colour);
    }
    if spec.crop > w.min(h) {
        return Err(Discard::TooSmall);
    }
    let x = rng.random_range(0..=w - spec.crop);
    let y = rng.random_range(0..=h - spec.crop);
    Ok(imageops::crop_imm(&scaled, x, y, spec.crop, spec.crop).to_image())
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads and preprocesses every PNG in `spec.dir`, in name order.
pub fn ingest_folder(spec: &IngestSpec) -> Result<Vec<RgbImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut small, mut colour, mut unreadable) = (0, 0, 0);
    let mut kept = Vec::new();
    for path in image_files(&spec.dir)? {
        let img = match image::open(&path) {
            Ok(i) => i.to_rgb8(),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                unreadable += 1;
                continue;
            }
        };
        match preprocess(&img, spec, &mut rng) {
            Ok(i) => kept.push(i),
            Err(Discard::TooSmall) => small += 1,
            Err(Discard::Colour) => colour += 1,
        }
    }
    if kept.is_empty() {
        return Err(Error::usage(format!(
            "no usable images in {}: {small} too small, {colour} over the saturation/value caps, \
             {unreadable} unreadable",
            spec.dir.display()
        )));
    }
    Ok(kept)
}
