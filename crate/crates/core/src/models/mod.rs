//! Generator and discriminator backends behind the completion objective.
//!
//! Two families exist: a small strided-convolution adversarial pair that can
//! be trained, and a closed-form oracle used for gradient and optimizer
//! checks. Both expose the same sampling and pullback surface.

mod container;
pub mod nn;
mod oracle;
mod train;

pub use container::{load_model, save_model, CONTAINER_VERSION};
pub use oracle::{OracleDiscriminator, OracleGenerator};
pub use train::{discriminator_accuracy, sample_variance, train_adversarial, EpochStats, TrainingConfig, TrainingLog};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageShape};
use nn::{Dims, Layer, Sequential};

/// Clamp applied to discriminator probabilities so `log(1 - D)` stays finite.
pub const PROB_EPS: f64 = 1e-7;
pub const DEFAULT_LATENT_DIM: usize = 100;
pub const DEFAULT_BASE_WIDTH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    AdversarialConv,
    OracleSmooth,
}

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(s))` without overflow.
pub(crate) fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn hwc_to_chw(img: &Image) -> Vec<f64> {
    let s = img.shape();
    let mut out = vec![0.0; s.len()];
    for (i, v) in img.data().iter().enumerate() {
        let ch = i % s.channels;
        let pix = i / s.channels;
        out[ch * s.pixels() + pix] = *v;
    }
    out
}

fn chw_to_hwc(data: &[f64], shape: ImageShape) -> Vec<f64> {
    let mut out = vec![0.0; shape.len()];
    for (i, v) in out.iter_mut().enumerate() {
        let ch = i % shape.channels;
        let pix = i / shape.channels;
        *v = data[ch * shape.pixels() + pix];
    }
    out
}

fn conv_depth(shape: ImageShape) -> Result<usize> {
    let side = shape.height;
    if shape.width != side || side < 8 || side % 4 != 0 || !(side / 4).is_power_of_two() {
        return Err(Error::invalid(format!(
            "convolutional models need square images with side 4 * 2^n >= 8, got {shape}"
        )));
    }
    if shape.channels == 0 {
        return Err(Error::invalid("image needs at least one channel"));
    }
    Ok((side / 4).trailing_zeros() as usize)
}

/// Linear projection to `4 x 4`, then stride-2 transposed convolutions
/// doubling resolution and halving width, `tanh` output.
pub fn generator_net(latent_dim: usize, shape: ImageShape, base_width: usize) -> Result<Sequential> {
    let depth = conv_depth(shape)?;
    if latent_dim == 0 || base_width == 0 {
        return Err(Error::invalid("latent dimension and base width must be positive"));
    }
    let mut ch = base_width << (depth - 1);
    let mut net = Sequential::new(Dims::new(latent_dim, 1, 1));
    net.linear(ch * 16)?.reshape(Dims::new(ch, 4, 4))?.activation(Layer::Relu)?;
    for i in 0..depth {
        let last = i + 1 == depth;
        let out = if last { shape.channels } else { ch / 2 };
        net.conv_transpose(out, 4, 2, 1)?;
        net.activation(if last { Layer::Tanh } else { Layer::Relu })?;
        ch = out;
    }
    Ok(net)
}

/// Stride-2 convolutions with leaky ReLU down to `4 x 4`, then a linear logit.
pub fn discriminator_net(shape: ImageShape, base_width: usize) -> Result<Sequential> {
    let depth = conv_depth(shape)?;
    let mut net = Sequential::new(Dims::new(shape.channels, shape.height, shape.width));
    let mut ch = base_width;
    for _ in 0..depth {
        net.conv(ch, 4, 2, 1)?.activation(Layer::LeakyRelu { slope: 0.2 })?;
        ch *= 2;
    }
    let flat = net.output_dims().len();
    net.reshape(Dims::new(flat, 1, 1))?.linear(1)?;
    Ok(net)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGenerator {
    pub(crate) net: Sequential,
    pub(crate) params: Vec<f64>,
    pub(crate) latent_dim: usize,
    pub(crate) shape: ImageShape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvDiscriminator {
    pub(crate) net: Sequential,
    pub(crate) params: Vec<f64>,
    pub(crate) shape: ImageShape,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorModel {
    Conv(ConvGenerator),
    Oracle(OracleGenerator),
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiscriminatorModel {
    Conv(ConvDiscriminator),
    Oracle(OracleDiscriminator),
}

/// Forward-pass record needed to pull image gradients back to `z`.
#[derive(Debug)]
pub enum GenTape {
    Conv(Vec<Vec<f64>>),
    Oracle,
}

impl GeneratorModel {
    pub fn latent_dim(&self) -> usize {
        match self {
            GeneratorModel::Conv(g) => g.latent_dim,
            GeneratorModel::Oracle(g) => g.latent_dim,
        }
    }

    pub fn shape(&self) -> ImageShape {
        match self {
            GeneratorModel::Conv(g) => g.shape,
            GeneratorModel::Oracle(g) => g.shape,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            GeneratorModel::Conv(_) => Family::AdversarialConv,
            GeneratorModel::Oracle(_) => Family::OracleSmooth,
        }
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape(self.latent_dim(), z.len()));
        }
        Ok(())
    }

    /// `G(z)`, always inside `[-1, 1]`.
    pub fn sample(&self, z: &[f64]) -> Result<Image> {
        self.forward(z).map(|(img, _)| img)
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Image, GenTape)> {
        self.check_latent(z)?;
        match self {
            GeneratorModel::Conv(g) => {
                let acts = g.net.forward(&g.params, z.to_vec());
                let out = chw_to_hwc(acts.last().expect("non-empty activations"), g.shape);
                Ok((Image::new(g.shape, out)?, GenTape::Conv(acts)))
            }
            GeneratorModel::Oracle(g) => Ok((g.forward(z), GenTape::Oracle)),
        }
    }

    /// Vector-Jacobian product: maps `dL/dG(z)` (HWC layout) to `dL/dz`.
    pub fn pullback(&self, output: &Image, tape: &GenTape, grad: &[f64]) -> Result<Vec<f64>> {
        if grad.len() != self.shape().len() {
            return Err(Error::shape(self.shape().len(), grad.len()));
        }
        match (self, tape) {
            (GeneratorModel::Conv(g), GenTape::Conv(acts)) => {
                let grad_chw = hwc_to_chw(&Image::new(g.shape, grad.to_vec())?);
                Ok(g.net.backward(&g.params, acts, grad_chw, None))
            }
            (GeneratorModel::Oracle(g), GenTape::Oracle) => Ok(g.pullback(output, grad)),
            _ => Err(Error::invalid("tape recorded by a different generator family")),
        }
    }
}

impl DiscriminatorModel {
    pub fn shape(&self) -> ImageShape {
        match self {
            DiscriminatorModel::Conv(d) => d.shape,
            DiscriminatorModel::Oracle(d) => d.shape,
        }
    }

    fn check_input(&self, x: &Image) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(Error::shape(self.shape(), x.shape()));
        }
        Ok(())
    }

    pub fn logit(&self, x: &Image) -> Result<f64> {
        self.check_input(x)?;
        Ok(match self {
            DiscriminatorModel::Conv(d) => d.net.forward(&d.params, hwc_to_chw(x)).last().expect("output")[0],
            DiscriminatorModel::Oracle(d) => d.logit(x),
        })
    }

    /// Logit and its gradient with respect to the input image (HWC layout).
    pub fn logit_with_input_grad(&self, x: &Image) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        match self {
            DiscriminatorModel::Conv(d) => {
                let acts = d.net.forward(&d.params, hwc_to_chw(x));
                let s = acts.last().expect("output")[0];
                let g = d.net.backward(&d.params, &acts, vec![1.0], None);
                Ok((s, chw_to_hwc(&g, d.shape)))
            }
            DiscriminatorModel::Oracle(d) => Ok((d.logit(x), d.input_grad())),
        }
    }

    /// Probability of "real", clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn discriminate(&self, x: &Image) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?).clamp(PROB_EPS, 1.0 - PROB_EPS))
    }
}

/// A generator with the discriminator it was trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPair {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub seed: u64,
    pub base_width: usize,
}

impl ModelPair {
    /// Freshly initialized (untrained) convolutional pair.
    pub fn untrained(latent_dim: usize, shape: ImageShape, base_width: usize, seed: u64) -> Result<Self> {
        let gnet = generator_net(latent_dim, shape, base_width)?;
        let dnet = discriminator_net(shape, base_width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gparams = gnet.init_params(&mut rng, 1.0);
        let dparams = dnet.init_params(&mut rng, 1.0);
        Ok(Self {
            generator: GeneratorModel::Conv(ConvGenerator {
                net: gnet,
                params: gparams,
                latent_dim,
                shape,
            }),
            discriminator: DiscriminatorModel::Conv(ConvDiscriminator {
                net: dnet,
                params: dparams,
                shape,
            }),
            seed,
            base_width,
        })
    }

    pub fn family(&self) -> Family {
        self.generator.family()
    }

    pub fn shape(&self) -> ImageShape {
        self.generator.shape()
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    /// Reject images this pair was not built for.
    pub fn check_shape(&self, image: ImageShape) -> Result<()> {
        if self.shape() != image {
            return Err(Error::ShapeMismatch {
                expected: self.shape().to_string(),
                actual: image.to_string(),
            });
        }
        Ok(())
    }

    /// Hex digest of the serialized container, identifying the exact weights.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = container::to_bytes(self);
        hex::encode(&Sha256::digest(bytes)[..8])
    }
}

/// Seeded closed-form pair for analytic tests.
pub fn make_oracle(latent_dim: usize, shape: ImageShape, seed: u64) -> Result<ModelPair> {
    let (g, d) = oracle::make_oracle_parts(latent_dim, shape, seed)?;
    Ok(ModelPair {
        generator: GeneratorModel::Oracle(g),
        discriminator: DiscriminatorModel::Oracle(d),
        seed,
        base_width: 0,
    })
}
