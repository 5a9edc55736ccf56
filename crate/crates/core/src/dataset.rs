//! Image ingestion, corrupted-cover construction and a procedural corpus.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, ImageShape, Rect};
use crate::inpainting::CompletionMask;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub pixels: Image,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: ImageShape,
    records: Vec<ImageRecord>,
}

impl Dataset {
    pub fn new(shape: ImageShape, records: Vec<ImageRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset("dataset has no records".into()));
        }
        if let Some(bad) = records.iter().find(|r| r.pixels.shape() != shape) {
            return Err(Error::shape(shape, bad.pixels.shape()));
        }
        Ok(Self { shape, records })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn images(&self) -> Vec<&Image> {
        self.records.iter().map(|r| &r.pixels).collect()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.records[i].pixels
    }
}

/// Center-crop to a square, resample to `size x size`, map to `[-1, 1]`.
/// Grayscale sources are replicated across channels when `channels == 3`.
pub fn preprocess(img: &image::DynamicImage, size: usize, channels: usize) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::invalid("zero-sized image"));
    }
    let side = w.min(h);
    let cropped = img.crop_imm((w - side) / 2, (h - side) / 2, side, side);
    let resized = if side as usize == size {
        cropped
    } else {
        cropped.resize_exact(size as u32, size as u32, FilterType::Triangle)
    };
    Image::from_dynamic(&resized, channels)
}

pub fn load_image(path: &Path, size: usize, channels: usize) -> Result<Image> {
    preprocess(&image::open(path)?, size, channels)
}

/// Decode without resampling.
pub fn read_image(path: &Path, channels: usize) -> Result<Image> {
    Image::from_dynamic(&image::open(path)?, channels)
}

pub fn ingest(dir: &Path, size: usize, channels: usize) -> Result<Dataset> {
    if size == 0 || !(channels == 1 || channels == 3) {
        return Err(Error::invalid(format!("cannot ingest to size {size} with {channels} channels")));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let records: Vec<ImageRecord> = paths
        .par_iter()
        .filter_map(|p| match load_image(p, size, channels) {
            Ok(pixels) => Some(ImageRecord {
                pixels,
                source: p.display().to_string(),
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                None
            }
        })
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!("no decodable images in {}", dir.display())));
    }
    Dataset::new(ImageShape::new(size, size, channels), records)
}

fn smoothstep_inside(d: f64, softness: f64) -> f64 {
    // 1 inside (d < 1), 0 outside, logistic edge
    1.0 / (1.0 + ((d - 1.0) / softness).exp())
}

fn ellipse_distance(y: f64, x: f64, cy: f64, cx: f64, ry: f64, rx: f64) -> f64 {
    (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt()
}

fn synth_one(shape: ImageShape, rng: &mut ChaCha8Rng) -> Image {
    let c = shape.channels;
    let color = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> { (0..c).map(|_| rng.gen_range(lo..hi)).collect() };
    let bg_inner = color(rng, -0.2, 0.9);
    let bg_outer = color(rng, -1.0, 0.0);
    let (gy, gx) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
    let skin = color(rng, 0.0, 0.9);
    let (fy, fx) = (rng.gen_range(0.42..0.58), rng.gen_range(0.42..0.58));
    let (fry, frx) = (rng.gen_range(0.28..0.38), rng.gen_range(0.2..0.3));
    let eye = color(rng, -1.0, -0.5);
    let eye_dy = rng.gen_range(0.06..0.12);
    let eye_dx = rng.gen_range(0.07..0.12);
    let eye_r = rng.gen_range(0.03..0.05);
    let mouth = color(rng, -0.8, 0.0);
    let mouth_dy = rng.gen_range(0.12..0.2);
    let mouth_rx = rng.gen_range(0.06..0.12);

    let (h, w) = (shape.height as f64, shape.width as f64);
    let mut data = Vec::with_capacity(shape.len());
    for r in 0..shape.height {
        for col in 0..shape.width {
            let y = (r as f64 + 0.5) / h;
            let x = (col as f64 + 0.5) / w;
            let radial = (((y - gy).powi(2) + (x - gx).powi(2)).sqrt() / 0.8).min(1.0);
            let face = smoothstep_inside(ellipse_distance(y, x, fy, fx, fry, frx), 0.05);
            let eyes = smoothstep_inside(ellipse_distance(y, x, fy - eye_dy, fx - eye_dx, eye_r, eye_r * 1.4), 0.15)
                + smoothstep_inside(ellipse_distance(y, x, fy - eye_dy, fx + eye_dx, eye_r, eye_r * 1.4), 0.15);
            let lips = smoothstep_inside(ellipse_distance(y, x, fy + mouth_dy, fx, 0.025, mouth_rx), 0.15);
            for ch in 0..c {
                let bg = bg_inner[ch] * (1.0 - radial) + bg_outer[ch] * radial;
                let mut v = bg * (1.0 - face) + skin[ch] * face;
                v = v * (1.0 - eyes.min(1.0)) + eye[ch] * eyes.min(1.0);
                v = v * (1.0 - lips) + mouth[ch] * lips;
                data.push(v.clamp(-1.0, 1.0));
            }
        }
    }
    Image::new(shape, data).expect("synthesized data matches shape")
}

/// Seeded face-like procedural images: a radial background gradient with a
/// soft-edged head ellipse, two eyes and a mouth. Image `i` depends only on
/// `(seed, i)`.
pub fn synthesize(count: usize, shape: ImageShape, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::EmptyDataset("requested zero synthetic images".into()));
    }
    let records = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            ImageRecord {
                pixels: synth_one(shape, &mut rng),
                source: format!("synthetic:{seed}:{i}"),
            }
        })
        .collect();
    Dataset::new(shape, records)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorruptedCover {
    /// Display copy: region pixels set to 0.0.
    pub image: Image,
    pub original: Image,
    pub region: Rect,
    pub mask: CompletionMask,
}

pub fn corrupt(original: &Image, region: Rect) -> Result<CorruptedCover> {
    let shape = original.shape();
    let mask = CompletionMask::from_region((shape.height, shape.width), region)?;
    let mut image = original.clone();
    for r in region.row..region.row + region.height {
        for c in region.col..region.col + region.width {
            for ch in 0..shape.channels {
                image.set(r, c, ch, 0.0);
            }
        }
    }
    Ok(CorruptedCover {
        image,
        original: original.clone(),
        region,
        mask,
    })
}
