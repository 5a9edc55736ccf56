//! Latent-space image completion with contextual, perceptual and message
//! losses.
//!
//! The objective for a latent `z` is
//!
//! ```text
//! L(z) = |M . (G(z) - y)|_1 + lambda * log(1 - D(G(z))) + w_msg * |P . (G(z) - m')|_1
//! ```
//!
//! where `M` is the completion mask (1 = keep), `P` the zero-padded grille
//! and `m'` the expanded carrier. Both L1 terms are sums over channels.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codec::slot_indices;
use crate::error::{Error, Result};
use crate::grille::PaddedGrille;
use crate::image::{Image, Rect};
use crate::models::{sigmoid, ModelPair, PROB_EPS};
use crate::optim::Adam;

pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const DEFAULT_LEARNING_RATE: f64 = 0.01;
pub const DEFAULT_BUDGET: usize = 1000;

/// Binary keep-mask over pixels, broadcast across channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompletionMask {
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl CompletionMask {
    pub fn all_ones(shape: (usize, usize)) -> Self {
        Self {
            height: shape.0,
            width: shape.1,
            cells: vec![1; shape.0 * shape.1],
        }
    }

    pub fn all_zeros(shape: (usize, usize)) -> Self {
        Self {
            height: shape.0,
            width: shape.1,
            cells: vec![0; shape.0 * shape.1],
        }
    }

    pub fn from_cells(shape: (usize, usize), cells: Vec<u8>) -> Result<Self> {
        if cells.len() != shape.0 * shape.1 {
            return Err(Error::shape(shape.0 * shape.1, cells.len()));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::invalid("completion mask must be binary"));
        }
        Ok(Self {
            height: shape.0,
            width: shape.1,
            cells,
        })
    }

    /// Keep everything except `region`.
    pub fn from_region(shape: (usize, usize), region: Rect) -> Result<Self> {
        region.check_within(shape.0, shape.1)?;
        let mut mask = Self::all_ones(shape);
        for r in region.row..region.row + region.height {
            mask.cells[r * shape.1 + region.col..r * shape.1 + region.col + region.width].fill(0);
        }
        Ok(mask)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn keeps(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col] == 1
    }

    pub fn zero_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Grille pixels are generated under the message loss.
    Soft,
    /// Grille pixels are kept verbatim from the carrier.
    Hard,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Soft => "soft",
            Mode::Hard => "hard",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Mode::Soft),
            "hard" => Ok(Mode::Hard),
            other => Err(Error::invalid(format!("unknown mode {other:?}, expected soft or hard"))),
        }
    }
}

pub fn build_completion_mask(region: Rect, padded: &PaddedGrille, mode: Mode) -> Result<CompletionMask> {
    let mut mask = CompletionMask::from_region(padded.shape(), region)?;
    if mode == Mode::Hard {
        let width = padded.shape().1;
        for (r, c) in padded.support() {
            mask.cells[r * width + c] = 1;
        }
    }
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub message: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            message: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        let w = Self { lambda, message: 1.0 };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0 && self.message.is_finite() && self.message >= 0.0) {
            return Err(Error::invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossComponents {
    pub contextual: f64,
    pub perceptual: f64,
    pub message: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn combine(contextual: f64, perceptual: f64, message: f64, weights: LossWeights) -> Self {
        Self {
            contextual,
            perceptual,
            message,
            total: contextual + weights.lambda * perceptual + weights.message * message,
        }
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(())
}

fn check_mask(img: &Image, shape: (usize, usize)) -> Result<()> {
    let s = img.shape();
    if (s.height, s.width) != shape {
        return Err(Error::shape(shape, (s.height, s.width)));
    }
    Ok(())
}

fn kept_indices(mask: &CompletionMask, channels: usize) -> Vec<usize> {
    mask.cells
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 1)
        .flat_map(|(p, _)| (0..channels).map(move |ch| p * channels + ch))
        .collect()
}

/// L1 mismatch on kept pixels.
pub fn contextual_loss(generated: &Image, y: &Image, mask: &CompletionMask) -> Result<f64> {
    check_same(generated, y)?;
    check_mask(y, mask.shape())?;
    let (g, t) = (generated.data(), y.data());
    Ok(kept_indices(mask, y.shape().channels).into_iter().map(|i| (g[i] - t[i]).abs()).sum())
}

/// L1 mismatch on grille-support pixels.
pub fn message_loss(generated: &Image, carrier: &Image, padded: &PaddedGrille) -> Result<f64> {
    check_same(generated, carrier)?;
    check_mask(carrier, padded.shape())?;
    let (g, t) = (generated.data(), carrier.data());
    Ok(slot_indices(padded, carrier.shape().channels).map(|i| (g[i] - t[i]).abs()).sum())
}

/// `log(1 - D)` with `D` clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn perceptual_loss(probability: f64) -> f64 {
    (1.0 - probability.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln()
}

#[inline]
fn l1_sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Everything fixed while searching for `z`: the corrupted image, masks,
/// carrier and weights. Flat index lists are precomputed once.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    y: &'a Image,
    carrier: &'a Image,
    weights: LossWeights,
    kept: Vec<usize>,
    support: Vec<usize>,
}

/// Which loss terms a gradient should include.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Contextual,
    Perceptual,
    Message,
}

impl<'a> Objective<'a> {
    pub fn new(
        y: &'a Image,
        mask: &CompletionMask,
        carrier: &'a Image,
        padded: &PaddedGrille,
        weights: LossWeights,
    ) -> Result<Self> {
        check_same(y, carrier)?;
        check_mask(y, mask.shape())?;
        check_mask(y, padded.shape())?;
        weights.validate()?;
        let channels = y.shape().channels;
        Ok(Self {
            y,
            carrier,
            weights,
            kept: kept_indices(mask, channels),
            support: slot_indices(padded, channels).collect(),
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    fn l1_terms(&self, g: &[f64]) -> (f64, f64) {
        let (y, m) = (self.y.data(), self.carrier.data());
        let ctx = self.kept.iter().map(|&i| (g[i] - y[i]).abs()).sum();
        let msg = self.support.iter().map(|&i| (g[i] - m[i]).abs()).sum();
        (ctx, msg)
    }

    pub fn evaluate(&self, z: &[f64], models: &ModelPair) -> Result<LossComponents> {
        let generated = models.generator.sample(z)?;
        let (ctx, msg) = self.l1_terms(generated.data());
        let perc = perceptual_loss(models.discriminator.discriminate(&generated)?);
        Ok(LossComponents::combine(ctx, perc, msg, self.weights))
    }

    /// Loss components and the gradient of the weighted sum of `terms`.
    pub fn gradient(&self, z: &[f64], models: &ModelPair, terms: &[Term]) -> Result<(LossComponents, Vec<f64>)> {
        let (generated, tape) = models.generator.forward(z)?;
        let g = generated.data();
        let mut upstream = vec![0.0; g.len()];
        let (ctx, msg) = self.l1_terms(g);

        if terms.contains(&Term::Contextual) {
            let y = self.y.data();
            for &i in &self.kept {
                upstream[i] += l1_sign(g[i] - y[i]);
            }
        }
        if terms.contains(&Term::Message) {
            let m = self.carrier.data();
            for &i in &self.support {
                upstream[i] += self.weights.message * l1_sign(g[i] - m[i]);
            }
        }
        let needs_disc_grad = terms.contains(&Term::Perceptual) && self.weights.lambda != 0.0;
        let perc = if needs_disc_grad {
            let (s, ds_dx) = models.discriminator.logit_with_input_grad(&generated)?;
            let p = sigmoid(s);
            // d/ds log(1 - sigmoid(s)) = -sigmoid(s); zero where the clamp is active
            if p > PROB_EPS && p < 1.0 - PROB_EPS {
                let scale = -self.weights.lambda * p;
                for (u, d) in upstream.iter_mut().zip(&ds_dx) {
                    *u += scale * d;
                }
            }
            perceptual_loss(p)
        } else {
            perceptual_loss(models.discriminator.discriminate(&generated)?)
        };
        let grad = models.generator.pullback(&generated, &tape, &upstream)?;
        Ok((LossComponents::combine(ctx, perc, msg, self.weights), grad))
    }

    pub fn full_gradient(&self, z: &[f64], models: &ModelPair) -> Result<(LossComponents, Vec<f64>)> {
        self.gradient(z, models, &[Term::Contextual, Term::Perceptual, Term::Message])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub contextual: f64,
    pub perceptual: f64,
    pub message: f64,
    pub total: f64,
    pub best_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointBest {
    pub iteration: usize,
    pub z: Vec<f64>,
    pub components: LossComponents,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationTrace {
    /// Records of the winning restart, one per iteration.
    pub records: Vec<TraceRecord>,
    pub budget: usize,
    pub restarts: usize,
    pub best_iteration: usize,
    pub best_components: LossComponents,
    /// Best latent over the first `iteration` steps, for each requested checkpoint.
    pub checkpoints: Vec<CheckpointBest>,
}

impl OptimizationTrace {
    pub fn best_is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].best_total <= w[0].best_total)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "contextual", "perceptual", "message", "total", "best_total"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.contextual.to_string(),
                r.perceptual.to_string(),
                r.message.to_string(),
                r.total.to_string(),
                r.best_total.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeConfig {
    pub budget: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Iterations at which to capture the best-so-far latent.
    pub checkpoints: Vec<usize>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            restarts: 1,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            checkpoints: Vec::new(),
        }
    }
}

/// Progress report handed to observers after each evaluated iterate.
#[derive(Debug)]
pub struct Progress<'a> {
    pub restart: usize,
    pub iteration: usize,
    pub z: &'a [f64],
    pub best_z: &'a [f64],
    pub components: LossComponents,
    pub best_total: f64,
}

pub fn optimize_latent(
    objective: &Objective<'_>,
    models: &ModelPair,
    config: &OptimizeConfig,
) -> Result<(Vec<f64>, OptimizationTrace)> {
    optimize_latent_observed(objective, models, config, &mut |_| {})
}

struct RestartOutcome {
    best_z: Vec<f64>,
    best: LossComponents,
    best_iteration: usize,
    records: Vec<TraceRecord>,
    checkpoints: Vec<CheckpointBest>,
}

/// Projected Adam on `z` inside `[-1, 1]^d`, keeping the best iterate.
///
/// Restart `r` starts from a uniform draw of the ChaCha8 stream `r` under
/// `seed`; the restart with the lowest best total wins (earliest on ties).
pub fn optimize_latent_observed(
    objective: &Objective<'_>,
    models: &ModelPair,
    config: &OptimizeConfig,
    observer: &mut dyn FnMut(&Progress<'_>),
) -> Result<(Vec<f64>, OptimizationTrace)> {
    if config.budget == 0 || config.restarts == 0 {
        return Err(Error::invalid("iteration budget and restarts must be at least 1"));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let d = models.latent_dim();
    let mut winner: Option<RestartOutcome> = None;
    let mut checkpoints: Vec<CheckpointBest> = Vec::new();

    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let mut z: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut adam = Adam::new(d, config.learning_rate);
        let mut outcome = RestartOutcome {
            best_z: z.clone(),
            best: LossComponents {
                total: f64::INFINITY,
                ..LossComponents::default()
            },
            best_iteration: 0,
            records: Vec::with_capacity(config.budget),
            checkpoints: Vec::new(),
        };

        for iteration in 1..=config.budget {
            let (loss, grad) = objective.full_gradient(&z, models)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite { what: "loss", iteration });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { what: "gradient", iteration });
            }
            if loss.total < outcome.best.total {
                outcome.best = loss;
                outcome.best_z.copy_from_slice(&z);
                outcome.best_iteration = iteration;
            }
            outcome.records.push(TraceRecord {
                iteration,
                contextual: loss.contextual,
                perceptual: loss.perceptual,
                message: loss.message,
                total: loss.total,
                best_total: outcome.best.total,
            });
            if config.checkpoints.contains(&iteration) {
                outcome.checkpoints.push(CheckpointBest {
                    iteration,
                    z: outcome.best_z.clone(),
                    components: outcome.best,
                });
            }
            observer(&Progress {
                restart,
                iteration,
                z: &z,
                best_z: &outcome.best_z,
                components: loss,
                best_total: outcome.best.total,
            });
            adam.step(&mut z, &grad);
            for v in &mut z {
                *v = v.clamp(-1.0, 1.0);
            }
        }

        if checkpoints.is_empty() {
            checkpoints = outcome.checkpoints.clone();
        } else {
            for (acc, cp) in checkpoints.iter_mut().zip(&outcome.checkpoints) {
                if cp.components.total < acc.components.total {
                    *acc = cp.clone();
                }
            }
        }
        if winner.as_ref().map_or(true, |w| outcome.best.total < w.best.total) {
            winner = Some(outcome);
        }
    }

    let w = winner.expect("at least one restart ran");
    Ok((
        w.best_z,
        OptimizationTrace {
            records: w.records,
            budget: config.budget,
            restarts: config.restarts,
            best_iteration: w.best_iteration,
            best_components: w.best,
            checkpoints,
        },
    ))
}

/// Composite `M . y + (1 - M) . G`: kept pixels are copied bit-exactly,
/// completed pixels come from the clipped generator output.
pub fn composite(y: &Image, mask: &CompletionMask, generated: &Image) -> Result<Image> {
    check_same(y, generated)?;
    check_mask(y, mask.shape())?;
    let channels = y.shape().channels;
    let mut out = y.clone();
    for (p, &keep) in mask.cells.iter().enumerate() {
        if keep == 0 {
            for ch in 0..channels {
                let i = p * channels + ch;
                out.data_mut()[i] = generated.data()[i].clamp(-1.0, 1.0);
            }
        }
    }
    Ok(out)
}

pub fn reconstruct(y: &Image, mask: &CompletionMask, z_hat: &[f64], models: &ModelPair) -> Result<Image> {
    composite(y, mask, &models.generator.sample(z_hat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grille::{derive_grille, load_grille, zero_pad};
    use crate::image::ImageShape;
    use crate::models::make_oracle;
    use rand::Rng;

    #[test]
    fn contextual_examples() {
        let shape = ImageShape::new(2, 2, 1);
        let y = Image::new(shape, vec![0.5, -0.2, 0.1, 0.9]).unwrap();
        assert_eq!(contextual_loss(&y, &y, &CompletionMask::all_ones((2, 2))).unwrap(), 0.0);
        let g = Image::new(shape, vec![0.2, 0.7, -1.0, 0.0]).unwrap();
        assert_eq!(contextual_loss(&g, &y, &CompletionMask::all_zeros((2, 2))).unwrap(), 0.0);
        let m = CompletionMask::from_cells((2, 2), vec![1, 0, 0, 0]).unwrap();
        let g = Image::new(shape, vec![0.8, 0.7, -1.0, 0.0]).unwrap();
        assert!((contextual_loss(&g, &y, &m).unwrap() - 0.3).abs() < 1e-12);
        assert!(contextual_loss(&g, &y, &CompletionMask::all_ones((3, 2))).is_err());
    }

    #[test]
    fn perceptual_examples() {
        assert!((perceptual_loss(0.5) - (-std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((perceptual_loss(0.5) + 0.6931).abs() < 1e-4);
        assert!((perceptual_loss(1.0) - PROB_EPS.ln()).abs() < 1e-8);
        assert!(perceptual_loss(0.0).abs() < 1e-6);
    }

    #[test]
    fn message_examples() {
        let shape = ImageShape::new(3, 3, 1);
        let g = load_grille(&[[0u8, 0, 0], [0, 1, 0], [0, 0, 0]]).unwrap();
        let p = zero_pad(&g, (3, 3), None).unwrap();
        let carrier = Image::filled(shape, 0.3);
        let mut gen = carrier.clone();
        assert_eq!(message_loss(&gen, &carrier, &p).unwrap(), 0.0);
        gen.set(1, 1, 0, 0.4);
        gen.set(0, 0, 0, -1.0);
        assert!((message_loss(&gen, &carrier, &p).unwrap() - 0.1).abs() < 1e-12);
        let empty = zero_pad(&load_grille(&[[0u8]]).unwrap(), (3, 3), None).unwrap();
        assert_eq!(message_loss(&gen, &carrier, &empty).unwrap(), 0.0);
    }

    #[test]
    fn combine_examples() {
        let c = LossComponents::combine(0.4, -0.6931, 0.2, LossWeights::new(0.1).unwrap());
        assert!((c.total - 0.53069).abs() < 1e-12);
        assert!(LossWeights::new(-1.0).is_err());
        assert!(LossWeights::new(f64::NAN).is_err());
    }

    #[test]
    fn total_vanishes_when_generator_matches() {
        let shape = ImageShape::new(4, 4, 1);
        let models = make_oracle(2, shape, 1).unwrap();
        let z = [0.1, -0.4];
        let y = models.generator.sample(&z).unwrap();
        let grille = derive_grille(b"k", (2, 2), 1.0).unwrap();
        let padded = zero_pad(&grille, (4, 4), None).unwrap();
        let mask = build_completion_mask(Rect::central_half(4, 4), &padded, Mode::Soft).unwrap();
        let obj = Objective::new(&y, &mask, &y, &padded, LossWeights::new(0.0).unwrap()).unwrap();
        assert_eq!(obj.evaluate(&z, &models).unwrap().total, 0.0);
    }

    #[test]
    fn empty_grille_all_kept_reduces_to_contextual_plus_perceptual() {
        let shape = ImageShape::new(4, 4, 1);
        let models = make_oracle(2, shape, 2).unwrap();
        let y = Image::filled(shape, 0.2);
        let padded = zero_pad(&load_grille(&[[0u8]]).unwrap(), (4, 4), None).unwrap();
        let mask = CompletionMask::all_ones((4, 4));
        let obj = Objective::new(&y, &mask, &y, &padded, LossWeights::new(0.3).unwrap()).unwrap();
        let z = [0.5, 0.5];
        let c = obj.evaluate(&z, &models).unwrap();
        let g = models.generator.sample(&z).unwrap();
        let p = models.discriminator.discriminate(&g).unwrap();
        assert_eq!(c.message, 0.0);
        let expected = contextual_loss(&g, &y, &mask).unwrap() + 0.3 * perceptual_loss(p);
        assert!((c.total - expected).abs() < 1e-12);
    }

    #[test]
    fn completion_mask_modes() {
        let grille = derive_grille(b"mask", (32, 32), 0.5).unwrap();
        let padded = zero_pad(&grille, (64, 64), None).unwrap();
        let region = Rect::central_half(64, 64);
        let soft = build_completion_mask(region, &padded, Mode::Soft).unwrap();
        let hard = build_completion_mask(region, &padded, Mode::Hard).unwrap();
        assert_eq!(soft.zero_count(), 1024);
        assert_eq!(hard.zero_count(), 1024 - grille.popcount());

        let empty = zero_pad(&load_grille(&[[0u8; 4]; 4]).unwrap(), (64, 64), None).unwrap();
        assert_eq!(
            build_completion_mask(region, &empty, Mode::Hard).unwrap(),
            build_completion_mask(region, &empty, Mode::Soft).unwrap()
        );
        assert!(build_completion_mask(Rect::new(50, 50, 32, 32), &padded, Mode::Soft).is_err());
        assert_eq!("hard".parse::<Mode>().unwrap(), Mode::Hard);
        assert!("medium".parse::<Mode>().is_err());
    }

    #[test]
    fn reconstruct_edge_masks() {
        let shape = ImageShape::new(4, 4, 3);
        let models = make_oracle(3, shape, 4).unwrap();
        let y = Image::new(shape, (0..48).map(|i| (i as f64 / 24.0) - 1.0).collect()).unwrap();
        let z = [0.3, 0.3, -0.9];
        assert_eq!(reconstruct(&y, &CompletionMask::all_ones((4, 4)), &z, &models).unwrap(), y);
        assert_eq!(
            reconstruct(&y, &CompletionMask::all_zeros((4, 4)), &z, &models).unwrap(),
            models.generator.sample(&z).unwrap()
        );
    }

    #[test]
    fn budget_one_trace() {
        let shape = ImageShape::new(4, 4, 1);
        let models = make_oracle(2, shape, 3).unwrap();
        let y = Image::filled(shape, 0.0);
        let padded = zero_pad(&load_grille(&[[1u8]]).unwrap(), (4, 4), None).unwrap();
        let mask = CompletionMask::all_ones((4, 4));
        let obj = Objective::new(&y, &mask, &y, &padded, LossWeights::default()).unwrap();
        let config = OptimizeConfig {
            budget: 1,
            ..OptimizeConfig::default()
        };
        let (_, trace) = optimize_latent(&obj, &models, &config).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].best_total, trace.records[0].total);
        assert_eq!(trace.best_iteration, 1);
        let bad = OptimizeConfig {
            budget: 0,
            ..OptimizeConfig::default()
        };
        assert!(optimize_latent(&obj, &models, &bad).is_err());
    }

    #[test]
    fn optimizer_is_deterministic_and_best_tracks_minimum() {
        let shape = ImageShape::new(4, 4, 1);
        let models = make_oracle(2, shape, 5).unwrap();
        let y = Image::filled(shape, 0.25);
        let padded = zero_pad(&derive_grille(b"z", (2, 2), 0.5).unwrap(), (4, 4), None).unwrap();
        let mask = build_completion_mask(Rect::central_half(4, 4), &padded, Mode::Soft).unwrap();
        let obj = Objective::new(&y, &mask, &y, &padded, LossWeights::default()).unwrap();
        let config = OptimizeConfig {
            budget: 200,
            restarts: 3,
            seed: 9,
            checkpoints: vec![10, 100],
            ..OptimizeConfig::default()
        };
        let (z1, t1) = optimize_latent(&obj, &models, &config).unwrap();
        let (z2, t2) = optimize_latent(&obj, &models, &config).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(t1, t2);
        assert!(t1.best_is_monotone());
        assert!(z1.iter().all(|v| (-1.0..=1.0).contains(v)));
        let min_record = t1.records.iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
        assert_eq!(t1.best_components.total, min_record);
        assert_eq!(obj.evaluate(&z1, &models).unwrap().total, min_record);
        assert_eq!(t1.checkpoints.len(), 2);
        assert!(t1.checkpoints[1].components.total <= t1.checkpoints[0].components.total);
        assert!(t1.to_csv().unwrap().starts_with("iteration,contextual,perceptual,message,total,best_total\n"));
    }

    fn fd_check(models: &ModelPair, obj: &Objective<'_>, z: &[f64], term: Term) -> f64 {
        let value = |z: &[f64]| {
            let c = obj.evaluate(z, models).unwrap();
            match term {
                Term::Contextual => c.contextual,
                Term::Perceptual => obj.weights().lambda * c.perceptual,
                Term::Message => c.message,
            }
        };
        let (_, analytic) = obj.gradient(z, models, &[term]).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..z.len() {
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[k] += h;
            zm[k] -= h;
            let numeric = (value(&zp) - value(&zm)) / (2.0 * h);
            let rel = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences_on_oracle() {
        let shape = ImageShape::new(6, 6, 2);
        let models = make_oracle(3, shape, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = Image::new(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let carrier = Image::new(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let padded = zero_pad(&derive_grille(b"grad", (4, 4), 0.5).unwrap(), (6, 6), None).unwrap();
        let mask = build_completion_mask(Rect::central_half(6, 6), &padded, Mode::Soft).unwrap();
        let obj = Objective::new(&y, &mask, &carrier, &padded, LossWeights::new(0.7).unwrap()).unwrap();
        for _ in 0..20 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for term in [Term::Contextual, Term::Perceptual, Term::Message] {
                let err = fd_check(&models, &obj, &z, term);
                assert!(err < 1e-4, "{term:?} rel err {err}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_conv() {
        let shape = ImageShape::new(8, 8, 1);
        let models = ModelPair::untrained(4, shape, 4, 2).unwrap();
        let y = Image::filled(shape, 0.9);
        let carrier = Image::filled(shape, -0.9);
        let padded = zero_pad(&derive_grille(b"conv", (4, 4), 0.5).unwrap(), (8, 8), None).unwrap();
        let mask = build_completion_mask(Rect::central_half(8, 8), &padded, Mode::Soft).unwrap();
        let obj = Objective::new(&y, &mask, &carrier, &padded, LossWeights::new(1.0).unwrap()).unwrap();
        let z = [0.2, -0.5, 0.7, 0.1];
        for term in [Term::Contextual, Term::Perceptual, Term::Message] {
            let err = fd_check(&models, &obj, &z, term);
            assert!(err < 1e-4, "{term:?} rel err {err}");
        }
    }
}
