//! Scaled experiment harnesses: BER versus stability index and budget,
//! grille-size sweep and the all-zero message run. Every trial derives its
//! own seed from the run seed, so rows are reproducible and independent of
//! scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::codec::{bit_error_rate, SecretMessage, StabilityIndex};
use crate::error::{Error, Result};
use crate::grille::GrilleFile;
use crate::image::{Image, Rect};
use crate::inpainting::{
    reconstruct, LossComponents, LossWeights, Mode, OptimizationTrace, OptimizeConfig,
};
use crate::models::ModelPair;
use crate::pipeline::{extract, hide, HideConfig, StegoImage};

/// Stable 64-bit seed for a labelled sub-task of a run.
pub fn derive_seed(base: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn write_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerConfig {
    pub mode: Mode,
    pub sis: Vec<StabilityIndex>,
    pub budgets: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub grille_shape: (usize, usize),
    pub density: f64,
    pub weights: LossWeights,
    pub restarts: usize,
    pub learning_rate: f64,
    /// Message bits per trial; the full grille capacity when `None`.
    pub message_len: Option<usize>,
}

impl Default for BerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Soft,
            sis: [4, 5, 6, 7].into_iter().map(|s| StabilityIndex::new(s).expect("valid si")).collect(),
            budgets: vec![60, 200, 600],
            trials: 20,
            seed: 0,
            grille_shape: (32, 32),
            density: 0.5,
            weights: LossWeights::default(),
            restarts: 1,
            learning_rate: crate::inpainting::DEFAULT_LEARNING_RATE,
            message_len: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BerRow {
    pub mode: Mode,
    pub si: u8,
    pub budget: usize,
    pub trials: usize,
    pub mean_ber: f64,
    pub min_ber: f64,
    pub max_ber: f64,
    pub seed: u64,
    pub model: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerResult {
    pub rows: Vec<BerRow>,
    /// One best-so-far trace per `(si, trial)`, in row order.
    pub traces: Vec<OptimizationTrace>,
}

impl BerResult {
    pub fn to_csv(&self) -> Result<String> {
        write_rows(&self.rows)
    }

    pub fn mean_ber(&self, si: u8, budget: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.si == si && r.budget == budget).map(|r| r.mean_ber)
    }
}

struct TrialOutcome {
    bers: Vec<f64>,
    trace: OptimizationTrace,
}

fn ber_trial(models: &ModelPair, covers: &[Image], config: &BerConfig, si: StabilityIndex, trial: usize) -> Result<TrialOutcome> {
    // shared across stability indices so each trial compares them on the
    // same cover, grille, message stream and starting latent
    let seed = derive_seed(config.seed, "ber-trial", &[trial as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key: [u8; 16] = rng.gen();
    let cover = &covers[trial % covers.len()];
    let shape = cover.shape();
    let grille = GrilleFile::keyed(&key, config.grille_shape, config.density, si);
    let padded = grille.padded((shape.height, shape.width))?;
    let len = config.message_len.unwrap_or_else(|| padded.capacity(shape.channels, si));
    let message = SecretMessage::random(&mut rng, len);

    let max_budget = *config.budgets.iter().max().expect("budgets checked non-empty");
    let mut hide_config = HideConfig::new(grille.clone(), config.mode);
    hide_config.weights = config.weights;
    hide_config.optimize = OptimizeConfig {
        budget: max_budget,
        restarts: config.restarts,
        learning_rate: config.learning_rate,
        seed,
        checkpoints: config.budgets.clone(),
    };
    let outcome = hide(cover, &message, &hide_config, models)?;

    // The best iterate after `b` steps of a long run is the result of a run
    // with budget `b`, so one optimization serves every budget.
    let mut bers = Vec::with_capacity(config.budgets.len());
    for &budget in &config.budgets {
        let cp = outcome
            .trace
            .checkpoints
            .iter()
            .find(|c| c.iteration == budget)
            .expect("every budget is a checkpoint");
        let stego = reconstruct(&outcome.carrier, &outcome.mask, &cp.z, models)?.quantized();
        bers.push(bit_error_rate(&message, &extract(&stego, &grille, Some(len))?)?);
    }
    Ok(TrialOutcome {
        bers,
        trace: outcome.trace,
    })
}

pub fn eval_ber(models: &ModelPair, covers: &[Image], config: &BerConfig) -> Result<BerResult> {
    if config.trials == 0 || config.sis.is_empty() || config.budgets.is_empty() || covers.is_empty() {
        return Err(Error::invalid("eval-ber needs trials, stability indices, budgets and covers"));
    }
    if config.budgets.contains(&0) {
        return Err(Error::invalid("budgets must be at least 1"));
    }
    let jobs: Vec<(StabilityIndex, usize)> = config
        .sis
        .iter()
        .flat_map(|&si| (0..config.trials).map(move |t| (si, t)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(si, t)| ber_trial(models, covers, config, si, t))
        .collect::<Result<Vec<_>>>()?;

    let model = models.fingerprint();
    let mut rows = Vec::new();
    for (s, &si) in config.sis.iter().enumerate() {
        let cell = &outcomes[s * config.trials..(s + 1) * config.trials];
        for (b, &budget) in config.budgets.iter().enumerate() {
            let bers: Vec<f64> = cell.iter().map(|o| o.bers[b]).collect();
            rows.push(BerRow {
                mode: config.mode,
                si: si.get(),
                budget,
                trials: config.trials,
                mean_ber: bers.iter().sum::<f64>() / bers.len() as f64,
                min_ber: bers.iter().copied().fold(f64::INFINITY, f64::min),
                max_ber: bers.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                seed: config.seed,
                model: model.clone(),
            });
        }
    }
    Ok(BerResult {
        rows,
        traces: outcomes.into_iter().map(|o| o.trace).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub density: f64,
    pub si: StabilityIndex,
    pub region: Option<Rect>,
    pub budget: usize,
    pub restarts: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![8, 16, 32, 48],
            density: 0.5,
            si: StabilityIndex::new(7).expect("valid si"),
            region: None,
            budget: 200,
            restarts: 1,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub size: usize,
    pub density: f64,
    pub popcount: usize,
    pub overlap_kept: usize,
    pub capacity_bits: usize,
    pub message_loss: f64,
    pub total_loss: f64,
    pub ber: f64,
    pub seed: u64,
    pub model: String,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub stegos: Vec<(usize, StegoImage)>,
    pub traces: Vec<OptimizationTrace>,
}

impl SweepResult {
    pub fn to_csv(&self) -> Result<String> {
        write_rows(&self.rows)
    }
}

/// Soft-mode hide of a random full-capacity message on one cover for each
/// grille size. Grilles larger than the region spill onto kept pixels and
/// are reported through `overlap_kept`.
pub fn sweep_grille_size(models: &ModelPair, cover: &Image, config: &SweepConfig) -> Result<SweepResult> {
    if config.sizes.is_empty() || config.sizes.contains(&0) {
        return Err(Error::invalid("grille sizes must be non-empty and positive"));
    }
    let shape = cover.shape();
    let model = models.fingerprint();
    let results = config
        .sizes
        .par_iter()
        .map(|&size| {
            let seed = derive_seed(config.seed, "sweep", &[size as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let key: [u8; 16] = rng.gen();
            let grille = GrilleFile::keyed(&key, (size, size), config.density, config.si);
            let padded = grille.padded((shape.height, shape.width))?;
            let capacity = padded.capacity(shape.channels, config.si);
            let message = SecretMessage::random(&mut rng, capacity);
            let mut hide_config = HideConfig::new(grille.clone(), Mode::Soft);
            hide_config.region = config.region;
            hide_config.weights = config.weights;
            hide_config.optimize = OptimizeConfig {
                budget: config.budget,
                restarts: config.restarts,
                seed,
                ..OptimizeConfig::default()
            };
            let out = hide(cover, &message, &hide_config, models)?;
            let ber = bit_error_rate(&message, &extract(&out.stego.image, &grille, Some(capacity))?)?;
            let row = SweepRow {
                size,
                density: config.density,
                popcount: padded.popcount(),
                overlap_kept: out.overlap.on_kept,
                capacity_bits: capacity,
                message_loss: out.best.message,
                total_loss: out.best.total,
                ber,
                seed: config.seed,
                model: model.clone(),
            };
            Ok((row, (size, out.stego), out.trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut stegos = Vec::new();
    let mut traces = Vec::new();
    for (row, stego, trace) in results {
        rows.push(row);
        stegos.push(stego);
        traces.push(trace);
    }
    Ok(SweepResult { rows, stegos, traces })
}

/// Ten evenly spaced iterations ending at `budget`; fewer when the budget is small.
pub fn snapshot_iterations(budget: usize) -> Vec<usize> {
    let mut its: Vec<usize> = (1..=10).map(|k| (k * budget / 10).max(1)).collect();
    its.dedup();
    its
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub iteration: usize,
    pub image: Image,
    pub best: LossComponents,
}

#[derive(Clone, Debug)]
pub struct ZeroMessageResult {
    pub stego: StegoImage,
    pub trace: OptimizationTrace,
    pub snapshots: Vec<Snapshot>,
}

/// Soft-mode hide of an all-zero message filling the grille, with composites
/// of the best iterate at evenly spaced iterations.
pub fn run_zero_message(
    models: &ModelPair,
    cover: &Image,
    grille: &GrilleFile,
    budget: usize,
    weights: LossWeights,
    seed: u64,
) -> Result<ZeroMessageResult> {
    let shape = cover.shape();
    let padded = grille.padded((shape.height, shape.width))?;
    let message = SecretMessage::zeros(padded.capacity(shape.channels, grille.si));
    let grille = GrilleFile {
        length: None,
        ..grille.clone()
    };
    let mut config = HideConfig::new(grille, Mode::Soft);
    config.weights = weights;
    config.optimize = OptimizeConfig {
        budget,
        seed,
        checkpoints: snapshot_iterations(budget),
        ..OptimizeConfig::default()
    };
    let out = hide(cover, &message, &config, models)?;

    let snapshots = out
        .trace
        .checkpoints
        .iter()
        .map(|cp| {
            Ok(Snapshot {
                iteration: cp.iteration,
                image: reconstruct(&out.carrier, &out.mask, &cp.z, models)?.quantized(),
                best: cp.components,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ZeroMessageResult {
        stego: out.stego,
        trace: out.trace,
        snapshots,
    })
}
