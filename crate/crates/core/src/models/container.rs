//! Versioned model container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                         |
//! |-------|-------------------------------------------------|
//! | 8     | magic `DCGMODEL`                                |
//! | 4     | container version (`u32`)                       |
//! | 4     | header length `n` (`u32`)                       |
//! | n     | UTF-8 JSON header (family, shapes, seed, layers)|
//! | 8     | parameter count `p` (`u64`)                     |
//! | 8p    | parameters as `f64`: generator then discriminator |
//! | 32    | SHA-256 of every preceding byte                 |

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nn::{Dims, Layer, Sequential};
use super::oracle::{OracleDiscriminator, OracleGenerator};
use super::{ConvDiscriminator, ConvGenerator, DiscriminatorModel, Family, GeneratorModel, ModelPair};
use crate::error::{Error, Result};
use crate::image::ImageShape;

pub const CONTAINER_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DCGMODEL";

#[derive(Debug, Serialize, Deserialize)]
struct NetDesc {
    input: Dims,
    layers: Vec<Layer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    family: Family,
    latent_dim: usize,
    shape: ImageShape,
    seed: u64,
    base_width: usize,
    generator_params: usize,
    discriminator_params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<NetDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    discriminator: Option<NetDesc>,
}

pub(crate) fn to_bytes(pair: &ModelPair) -> Vec<u8> {
    let (gparams, dparams, gdesc, ddesc): (Vec<f64>, Vec<f64>, _, _) = match (&pair.generator, &pair.discriminator) {
        (GeneratorModel::Conv(g), DiscriminatorModel::Conv(d)) => (
            g.params.clone(),
            d.params.clone(),
            Some(NetDesc {
                input: g.net.input_dims(),
                layers: g.net.layers().to_vec(),
            }),
            Some(NetDesc {
                input: d.net.input_dims(),
                layers: d.net.layers().to_vec(),
            }),
        ),
        (GeneratorModel::Oracle(g), DiscriminatorModel::Oracle(d)) => {
            let mut gp = g.a.clone();
            gp.extend_from_slice(&g.b);
            let mut dp = d.w.clone();
            dp.push(d.c);
            (gp, dp, None, None)
        }
        _ => unreachable!("model pairs never mix families"),
    };
    let header = Header {
        family: pair.family(),
        latent_dim: pair.latent_dim(),
        shape: pair.shape(),
        seed: pair.seed,
        base_width: pair.base_width,
        generator_params: gparams.len(),
        discriminator_params: dparams.len(),
        generator: gdesc,
        discriminator: ddesc,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let total = gparams.len() + dparams.len();
    let mut out = Vec::with_capacity(8 + 4 + 4 + header.len() + 8 + 8 * total + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(total as u64).to_le_bytes());
    for v in gparams.iter().chain(&dparams) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Integrity("container truncated".into()));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<ModelPair> {
    if bytes.len() < 8 + 4 + 4 + 8 + 32 {
        return Err(Error::Integrity("container truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if body[..8] != MAGIC[..] {
        return Err(Error::Integrity("bad magic".into()));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut buf = &body[8..];
    let version = u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes"));
    if version != CONTAINER_VERSION {
        return Err(Error::Version(version));
    }
    let hlen = u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(take(&mut buf, hlen)?)?;
    let count = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes")) as usize;
    if count != header.generator_params + header.discriminator_params || buf.len() != count * 8 {
        return Err(Error::Integrity("parameter count disagrees with header".into()));
    }
    let params: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let (gparams, dparams) = params.split_at(header.generator_params);
    let shape = header.shape;
    let mismatch = || Error::Integrity("parameter layout disagrees with header".into());

    let (generator, discriminator) = match header.family {
        Family::AdversarialConv => {
            let (gd, dd) = header.generator.zip(header.discriminator).ok_or_else(mismatch)?;
            let gnet = Sequential::from_layers(gd.input, gd.layers)?;
            let dnet = Sequential::from_layers(dd.input, dd.layers)?;
            if gnet.num_params() != gparams.len()
                || dnet.num_params() != dparams.len()
                || gnet.input_dims().len() != header.latent_dim
                || gnet.output_dims() != Dims::new(shape.channels, shape.height, shape.width)
                || dnet.input_dims() != Dims::new(shape.channels, shape.height, shape.width)
                || dnet.output_dims().len() != 1
            {
                return Err(mismatch());
            }
            (
                GeneratorModel::Conv(ConvGenerator {
                    net: gnet,
                    params: gparams.to_vec(),
                    latent_dim: header.latent_dim,
                    shape,
                }),
                DiscriminatorModel::Conv(ConvDiscriminator {
                    net: dnet,
                    params: dparams.to_vec(),
                    shape,
                }),
            )
        }
        Family::OracleSmooth => {
            let n = shape.len();
            if gparams.len() != n * header.latent_dim + n || dparams.len() != n + 1 {
                return Err(mismatch());
            }
            let (a, b) = gparams.split_at(n * header.latent_dim);
            (
                GeneratorModel::Oracle(OracleGenerator::new(header.latent_dim, shape, a.to_vec(), b.to_vec())?),
                DiscriminatorModel::Oracle(OracleDiscriminator::new(shape, dparams[..n].to_vec(), dparams[n])?),
            )
        }
    };
    Ok(ModelPair {
        generator,
        discriminator,
        seed: header.seed,
        base_width: header.base_width,
    })
}

pub fn save_model(pair: &ModelPair, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(pair))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelPair> {
    from_bytes(&std::fs::read(path)?)
}
