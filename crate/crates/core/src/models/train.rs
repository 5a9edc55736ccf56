use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{hwc_to_chw, save_model, sigmoid, softplus, ConvDiscriminator, ConvGenerator};
use super::{DiscriminatorModel, GeneratorModel, ModelPair, DEFAULT_BASE_WIDTH, DEFAULT_LATENT_DIM};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub latent_dim: usize,
    pub base_width: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            beta1: 0.5,
            latent_dim: DEFAULT_LATENT_DIM,
            base_width: DEFAULT_BASE_WIDTH,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub discriminator_loss: f64,
    pub generator_loss: f64,
    pub discriminator_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub initial_accuracy: f64,
    pub epochs: Vec<EpochStats>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "discriminator_loss", "generator_loss", "discriminator_accuracy"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.discriminator_loss.to_string(),
                e.generator_loss.to_string(),
                e.discriminator_accuracy.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }
}

fn uniform_latent(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn conv_parts(pair: &ModelPair) -> Result<(&ConvGenerator, &ConvDiscriminator)> {
    match (&pair.generator, &pair.discriminator) {
        (GeneratorModel::Conv(g), DiscriminatorModel::Conv(d)) => Ok((g, d)),
        _ => Err(Error::invalid("only the convolutional family is trainable")),
    }
}

/// Fraction of real images scored above 0.5 plus fakes scored below it.
pub fn discriminator_accuracy(pair: &ModelPair, data: &Dataset, fakes: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents: Vec<Vec<f64>> = (0..fakes).map(|_| uniform_latent(&mut rng, pair.latent_dim())).collect();
    let real_hits = data
        .images()
        .par_iter()
        .map(|img| pair.discriminator.logit(img).map(|s| usize::from(s > 0.0)))
        .collect::<Result<Vec<_>>>()?;
    let fake_hits = latents
        .par_iter()
        .map(|z| {
            let img = pair.generator.sample(z)?;
            pair.discriminator.logit(&img).map(|s| usize::from(s <= 0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = real_hits.len() + fake_hits.len();
    Ok((real_hits.iter().sum::<usize>() + fake_hits.iter().sum::<usize>()) as f64 / total as f64)
}

struct SampleGrad {
    grad: Vec<f64>,
    loss: f64,
    correct: usize,
}

fn sum_grads(parts: Vec<SampleGrad>, len: usize) -> (Vec<f64>, f64, usize) {
    let mut grad = vec![0.0; len];
    let (mut loss, mut correct) = (0.0, 0);
    for p in parts {
        for (g, v) in grad.iter_mut().zip(&p.grad) {
            *g += v;
        }
        loss += p.loss;
        correct += p.correct;
    }
    (grad, loss, correct)
}

/// Minimax adversarial training with the non-saturating generator loss.
///
/// Per-sample gradients are computed in parallel and reduced in batch order,
/// so results do not depend on the thread count.
pub fn train_adversarial(data: &Dataset, config: &TrainingConfig) -> Result<(ModelPair, TrainingLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    if config.batch_size == 0 || config.latent_dim == 0 || config.base_width == 0 {
        return Err(Error::invalid("batch size, latent dimension and width must be positive"));
    }
    let shape = data.shape();
    let mut pair = ModelPair::untrained(config.latent_dim, shape, config.base_width, config.seed)?;
    let mut log = TrainingLog {
        initial_accuracy: discriminator_accuracy(&pair, data, data.len(), config.seed ^ 0xacc)?,
        ..TrainingLog::default()
    };
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let (g0, d0) = conv_parts(&pair)?;
    let (gnet, dnet) = (g0.net.clone(), d0.net.clone());
    let mut gparams = g0.params.clone();
    let mut dparams = d0.params.clone();
    let mut adam_g = Adam::with_betas(gparams.len(), config.lr_generator, config.beta1, 0.999);
    let mut adam_d = Adam::with_betas(dparams.len(), config.lr_discriminator, config.beta1, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let real: Vec<Vec<f64>> = data.images().iter().map(|img| hwc_to_chw(img)).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut d_loss, mut g_loss, mut correct, mut seen) = (0.0, 0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            let n = batch.len() as f64;

            let latents: Vec<Vec<f64>> = batch.iter().map(|_| uniform_latent(&mut rng, config.latent_dim)).collect();
            let parts: Vec<SampleGrad> = batch
                .par_iter()
                .zip(&latents)
                .map(|(&idx, z)| {
                    let mut grad = vec![0.0; dparams.len()];
                    let acts = dnet.forward(&dparams, real[idx].clone());
                    let s_real = acts.last().expect("logit")[0];
                    dnet.backward(&dparams, &acts, vec![sigmoid(s_real) - 1.0], Some(&mut grad));
                    let fake = gnet.forward(&gparams, z.clone()).pop().expect("image");
                    let acts = dnet.forward(&dparams, fake);
                    let s_fake = acts.last().expect("logit")[0];
                    dnet.backward(&dparams, &acts, vec![sigmoid(s_fake)], Some(&mut grad));
                    SampleGrad {
                        grad,
                        loss: softplus(-s_real) + softplus(s_fake),
                        correct: usize::from(s_real > 0.0) + usize::from(s_fake <= 0.0),
                    }
                })
                .collect();
            let (mut grad, loss, hits) = sum_grads(parts, dparams.len());
            grad.iter_mut().for_each(|g| *g /= n);
            adam_d.step(&mut dparams, &grad);
            d_loss += loss;
            correct += hits;
            seen += batch.len();

            let latents: Vec<Vec<f64>> = batch.iter().map(|_| uniform_latent(&mut rng, config.latent_dim)).collect();
            let parts: Vec<SampleGrad> = latents
                .par_iter()
                .map(|z| {
                    let mut grad = vec![0.0; gparams.len()];
                    let gacts = gnet.forward(&gparams, z.clone());
                    let dacts = dnet.forward(&dparams, gacts.last().expect("image").clone());
                    let s = dacts.last().expect("logit")[0];
                    let gx = dnet.backward(&dparams, &dacts, vec![sigmoid(s) - 1.0], None);
                    gnet.backward(&gparams, &gacts, gx, Some(&mut grad));
                    SampleGrad {
                        grad,
                        loss: softplus(-s),
                        correct: 0,
                    }
                })
                .collect();
            let (mut grad, loss, _) = sum_grads(parts, gparams.len());
            grad.iter_mut().for_each(|g| *g /= n);
            adam_g.step(&mut gparams, &grad);
            g_loss += loss;
        }
        let stats = EpochStats {
            epoch,
            discriminator_loss: d_loss / seen as f64,
            generator_loss: g_loss / seen as f64,
            discriminator_accuracy: correct as f64 / (2 * seen) as f64,
        };
        if !stats.discriminator_loss.is_finite()
            || !stats.generator_loss.is_finite()
            || gparams.iter().chain(&dparams).any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                what: "training loss",
                iteration: epoch,
            });
        }
        log::debug!(
            "epoch {epoch}: d_loss {:.4} g_loss {:.4} d_acc {:.3}",
            stats.discriminator_loss,
            stats.generator_loss,
            stats.discriminator_accuracy
        );
        log.epochs.push(stats);

        if let (Some(dir), true) = (&config.checkpoint_dir, config.checkpoint_every > 0) {
            if epoch % config.checkpoint_every == 0 || epoch == config.epochs {
                set_params(&mut pair, &gparams, &dparams);
                let path = dir.join(format!("epoch-{epoch:04}.dcgm"));
                save_model(&pair, &path)?;
                log.checkpoints.push(path);
            }
        }
    }
    set_params(&mut pair, &gparams, &dparams);
    Ok((pair, log))
}

fn set_params(pair: &mut ModelPair, gparams: &[f64], dparams: &[f64]) {
    if let GeneratorModel::Conv(g) = &mut pair.generator {
        g.params.copy_from_slice(gparams);
    }
    if let DiscriminatorModel::Conv(d) = &mut pair.discriminator {
        d.params.copy_from_slice(dparams);
    }
}

/// Per-pixel variance across `count` samples, averaged over pixels.
pub fn sample_variance(pair: &ModelPair, count: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Image> = (0..count)
        .map(|_| pair.generator.sample(&uniform_latent(&mut rng, pair.latent_dim())))
        .collect::<Result<_>>()?;
    let n = pair.shape().len();
    let mut total = 0.0;
    for i in 0..n {
        let mean = samples.iter().map(|s| s.data()[i]).sum::<f64>() / count as f64;
        total += samples.iter().map(|s| (s.data()[i] - mean).powi(2)).sum::<f64>() / count as f64;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize;
    use crate::image::ImageShape;
    use crate::models::load_model;

    fn small_config(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            epochs,
            batch_size: 8,
            latent_dim: 16,
            base_width: 8,
            seed: 3,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_models() {
        let data = synthesize(8, ImageShape::new(16, 16, 3), 1).unwrap();
        let (pair, log) = train_adversarial(&data, &small_config(0)).unwrap();
        assert!(log.epochs.is_empty());
        assert_eq!(pair, ModelPair::untrained(16, data.shape(), 8, 3).unwrap());
    }

    #[test]
    fn smoke_run_is_finite_deterministic_and_checkpointed() {
        let dir = tempfile::tempdir().unwrap();
        let data = synthesize(40, ImageShape::new(16, 16, 3), 2).unwrap();
        let mut config = small_config(3);
        config.checkpoint_every = 2;
        config.checkpoint_dir = Some(dir.path().to_path_buf());
        let (pair, log) = train_adversarial(&data, &config).unwrap();
        assert_eq!(log.epochs.len(), 3);
        assert!(log.epochs.iter().all(|e| e.discriminator_loss.is_finite() && e.generator_loss.is_finite()));
        assert_eq!(log.checkpoints.len(), 2);
        let last = load_model(log.checkpoints.last().unwrap()).unwrap();
        assert_eq!(last, pair);

        config.checkpoint_dir = None;
        let (again, log2) = train_adversarial(&data, &config).unwrap();
        assert_eq!(again, pair);
        assert_eq!(log2.epochs, log.epochs);
        assert!(sample_variance(&pair, 16, 0).unwrap() > 0.0);
    }

    #[test]
    fn rejects_oracle_and_empty() {
        let data = synthesize(4, ImageShape::new(16, 16, 1), 0).unwrap();
        let mut config = small_config(1);
        config.batch_size = 0;
        assert!(train_adversarial(&data, &config).is_err());
    }
}
