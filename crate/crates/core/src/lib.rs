//! Steganography by image completion: a secret bitstream is written into
//! pixels selected by a keyed binary grille, then the surrounding hole is
//! filled by searching the latent space of a generative model.

pub mod codec;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod grille;
pub mod image;
pub mod inpainting;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod plot;

pub use error::{Error, Result};
