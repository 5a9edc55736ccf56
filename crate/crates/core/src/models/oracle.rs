//! Closed-form test double: `G(z) = tanh(A z + b)`, `D(x) = logistic(<w, x> + c)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{Image, ImageShape};

#[derive(Clone, Debug, PartialEq)]
pub struct OracleGenerator {
    pub(crate) latent_dim: usize,
    pub(crate) shape: ImageShape,
    /// `n x d`, row-major, `n = shape.len()`.
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleDiscriminator {
    pub(crate) shape: ImageShape,
    pub(crate) w: Vec<f64>,
    pub(crate) c: f64,
}

impl OracleGenerator {
    pub fn new(latent_dim: usize, shape: ImageShape, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if latent_dim == 0 || a.len() != shape.len() * latent_dim || b.len() != shape.len() {
            return Err(Error::invalid("oracle generator dimensions do not agree"));
        }
        Ok(Self {
            latent_dim,
            shape,
            a,
            b,
        })
    }

    pub fn with_zero_bias(mut self) -> Self {
        self.b.fill(0.0);
        self
    }

    pub(crate) fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        let d = self.latent_dim;
        self.b
            .iter()
            .enumerate()
            .map(|(i, &bi)| bi + self.a[i * d..(i + 1) * d].iter().zip(z).map(|(a, z)| a * z).sum::<f64>())
            .collect()
    }

    pub(crate) fn forward(&self, z: &[f64]) -> Image {
        let data = self.pre_activation(z).into_iter().map(f64::tanh).collect();
        Image::new(self.shape, data).expect("oracle output matches its shape")
    }

    /// `dL/dz = A^T (grad * (1 - y^2))`.
    pub(crate) fn pullback(&self, output: &Image, grad: &[f64]) -> Vec<f64> {
        let d = self.latent_dim;
        let mut gz = vec![0.0; d];
        for (i, (&y, &g)) in output.data().iter().zip(grad).enumerate() {
            let s = g * (1.0 - y * y);
            if s != 0.0 {
                for (gj, aij) in gz.iter_mut().zip(&self.a[i * d..(i + 1) * d]) {
                    *gj += s * aij;
                }
            }
        }
        gz
    }

    /// Analytic Jacobian `diag(1 - tanh^2) A`, `n x d` row-major.
    pub fn jacobian(&self, z: &[f64]) -> Vec<f64> {
        let d = self.latent_dim;
        let pre = self.pre_activation(z);
        let mut jac = self.a.clone();
        for (i, p) in pre.iter().enumerate() {
            let s = 1.0 - p.tanh().powi(2);
            for v in &mut jac[i * d..(i + 1) * d] {
                *v *= s;
            }
        }
        jac
    }
}

impl OracleDiscriminator {
    pub fn new(shape: ImageShape, w: Vec<f64>, c: f64) -> Result<Self> {
        if w.len() != shape.len() {
            return Err(Error::invalid("oracle discriminator weight length mismatch"));
        }
        Ok(Self { shape, w, c })
    }

    pub(crate) fn logit(&self, x: &Image) -> f64 {
        self.c + self.w.iter().zip(x.data()).map(|(w, x)| w * x).sum::<f64>()
    }

    pub(crate) fn input_grad(&self) -> Vec<f64> {
        self.w.clone()
    }
}

/// Seeded oracle pair with `A ~ N(0, 1)`, `b ~ N(0, 0.25)`,
/// `w ~ N(0, 1/n)`, `c ~ N(0, 0.01)`.
pub fn make_oracle_parts(
    latent_dim: usize,
    shape: ImageShape,
    seed: u64,
) -> Result<(OracleGenerator, OracleDiscriminator)> {
    if latent_dim == 0 {
        return Err(Error::invalid("latent dimension must be at least 1"));
    }
    let n = shape.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let a = (0..n * latent_dim).map(|_| unit.sample(&mut rng)).collect();
    let b = (0..n).map(|_| 0.5 * unit.sample(&mut rng)).collect();
    let w_scale = 1.0 / (n as f64).sqrt();
    let w = (0..n).map(|_| w_scale * unit.sample(&mut rng)).collect();
    let c = 0.1 * unit.sample(&mut rng);
    Ok((
        OracleGenerator::new(latent_dim, shape, a, b)?,
        OracleDiscriminator::new(shape, w, c)?,
    ))
}
