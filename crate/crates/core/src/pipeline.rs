//! End-to-end hide and extract, stego file policy and provenance.

use std::path::{Path, PathBuf};

use image::ImageFormat;
use serde::Serialize;

use crate::codec::{expand_message, extract_message, SecretMessage};
use crate::dataset::corrupt;
use crate::error::{Error, Result};
use crate::grille::{check_overlap, GrilleFile, OverlapReport, PaddedGrille};
use crate::image::{Image, ImageShape, Rect};
use crate::inpainting::{
    build_completion_mask, optimize_latent_observed, CompletionMask, reconstruct, LossComponents, LossWeights, Mode, Objective,
    OptimizationTrace, OptimizeConfig, Progress,
};
use crate::models::{Family, ModelPair};

#[derive(Clone, Debug, PartialEq)]
pub struct HideConfig {
    pub grille: GrilleFile,
    pub mode: Mode,
    pub weights: LossWeights,
    pub optimize: OptimizeConfig,
    /// Region to complete; the central half-size square when `None`.
    pub region: Option<Rect>,
}

impl HideConfig {
    pub fn new(grille: GrilleFile, mode: Mode) -> Self {
        Self {
            grille,
            mode,
            weights: LossWeights::default(),
            optimize: OptimizeConfig::default(),
            region: None,
        }
    }

    pub fn region_for(&self, shape: ImageShape) -> Rect {
        self.region.unwrap_or_else(|| Rect::central_half(shape.height, shape.width))
    }
}

/// Public run metadata written next to a stego file. Nothing here depends on
/// the grille key, its cells, the stability index or the message.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub mode: Mode,
    pub lambda: f64,
    pub budget: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub region: [usize; 4],
    pub shape: [usize; 3],
    pub model_family: Family,
    pub model_fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StegoImage {
    /// Quantized pixels in `[-1, 1]`, exactly representable as 8-bit.
    pub image: Image,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct HideOutcome {
    pub stego: StegoImage,
    pub trace: OptimizationTrace,
    pub best_z: Vec<f64>,
    pub best: LossComponents,
    pub overlap: OverlapReport,
    pub padded: PaddedGrille,
    /// Corrupted cover with the message written in; the target on kept pixels.
    pub carrier: Image,
    pub mask: CompletionMask,
}

pub fn hide(cover: &Image, message: &SecretMessage, config: &HideConfig, models: &ModelPair) -> Result<HideOutcome> {
    hide_observed(cover, message, config, models, &mut |_| {})
}

/// corrupt, pad the grille, write the message, build the mask, search the
/// latent space, composite and quantize.
pub fn hide_observed(
    cover: &Image,
    message: &SecretMessage,
    config: &HideConfig,
    models: &ModelPair,
    observer: &mut dyn FnMut(&Progress<'_>),
) -> Result<HideOutcome> {
    let shape = cover.shape();
    models.check_shape(shape)?;
    if let Some(len) = config.grille.length {
        if len != message.len() {
            return Err(Error::invalid(format!(
                "grille file declares {len} message bits but the message has {}",
                message.len()
            )));
        }
    }
    let region = config.region_for(shape);
    let corrupted = corrupt(cover, region)?;
    let padded = config.grille.padded((shape.height, shape.width))?;
    let carrier = expand_message(message, &corrupted.image, &padded, config.grille.si)?;
    let mask = build_completion_mask(region, &padded, config.mode)?;
    let overlap = check_overlap(&padded, &corrupted.mask)?;

    let objective = Objective::new(&carrier.image, &mask, &carrier.image, &padded, config.weights)?;
    let (best_z, trace) = optimize_latent_observed(&objective, models, &config.optimize, observer)?;
    let image = reconstruct(&carrier.image, &mask, &best_z, models)?.quantized();

    let provenance = Provenance {
        tool: format!("cardan {}", env!("CARGO_PKG_VERSION")),
        mode: config.mode,
        lambda: config.weights.lambda,
        budget: config.optimize.budget,
        restarts: config.optimize.restarts,
        learning_rate: config.optimize.learning_rate,
        seed: config.optimize.seed,
        region: [region.row, region.col, region.height, region.width],
        shape: [shape.height, shape.width, shape.channels],
        model_family: models.family(),
        model_fingerprint: models.fingerprint(),
    };
    Ok(HideOutcome {
        stego: StegoImage { image, provenance },
        best: trace.best_components,
        trace,
        best_z,
        overlap,
        padded,
        carrier: carrier.image,
        mask,
    })
}

/// Model-free extraction. `expected_length` overrides the grille file's
/// `length` field; one of the two must be present.
pub fn extract(stego: &Image, grille: &GrilleFile, expected_length: Option<usize>) -> Result<SecretMessage> {
    let length = expected_length
        .or(grille.length)
        .ok_or_else(|| Error::invalid("expected message length is required"))?;
    let shape = stego.shape();
    let padded = grille.padded((shape.height, shape.width))?;
    extract_message(stego, &padded, grille.si, length)
}

/// Lossless raster formats accepted for stego output and input.
pub fn lossless_format(path: &Path) -> Result<ImageFormat> {
    match ImageFormat::from_path(path) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Bmp | ImageFormat::Pnm | ImageFormat::Tiff)) => Ok(f),
        _ => Err(Error::LossyFormat(path.to_path_buf())),
    }
}

pub fn write_stego(path: &Path, image: &Image) -> Result<()> {
    let format = lossless_format(path)?;
    image.to_dynamic()?.save_with_format(path, format)?;
    Ok(())
}

/// Decode a stego raster. Grayscale files give one channel, everything else three.
pub fn read_stego(path: &Path) -> Result<Image> {
    let format = lossless_format(path)?;
    let reader = image::io::Reader::with_format(std::io::BufReader::new(std::fs::File::open(path)?), format);
    let img = reader.decode()?;
    let channels = match img.color() {
        image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16 => 1,
        _ => 3,
    };
    Image::from_dynamic(&img, channels)
}

pub fn sidecar_path(stego_path: &Path) -> PathBuf {
    let mut name = stego_path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn write_provenance(stego_path: &Path, provenance: &Provenance) -> Result<PathBuf> {
    let path = sidecar_path(stego_path);
    let mut text = serde_json::to_string_pretty(provenance)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}
