//! Message expansion onto grille pixels and the inverse extraction.
//!
//! Each writable (pixel, channel) slot carries one chunk of `8 - si` message
//! bits in the most significant bit planes of its 8-bit value. The remaining
//! `si` low planes hold the midpoint pattern `10...0`, which centers the
//! value inside its quantization bin.
//!
//! Traversal order: grille support pixels row-major, then channels
//! `0..C` within each pixel. Message bits fill chunks MSB first.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grille::PaddedGrille;
use crate::image::{dequantize, quantize, Image};

/// Number of low-order bit planes kept as redundancy, `0..=7`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StabilityIndex(u8);

impl StabilityIndex {
    pub fn new(si: u8) -> Result<Self> {
        if si <= 7 {
            Ok(Self(si))
        } else {
            Err(Error::invalid(format!("stability index {si} outside 0..=7")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn message_bits(self) -> usize {
        8 - self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = StabilityIndex> {
        (0..=7).map(StabilityIndex)
    }
}

impl std::fmt::Display for StabilityIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SecretMessage {
    bits: Vec<bool>,
}

impl SecretMessage {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Parse a string of `'0'`/`'1'` characters.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::invalid(format!("non-binary character {c:?} in bit string"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bits)
    }

    /// Bytes expanded MSB first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let bits = bytes
            .iter()
            .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
            .collect();
        Self { bits }
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::invalid(format!("bad message hex: {e}")))?;
        Ok(Self::from_bytes(&bytes))
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        Self {
            bits: (0..len).map(|_| rng.gen()).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Pack MSB first; a trailing partial byte is zero-filled.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))
            })
            .collect()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

/// Place `8 - si` bits (MSB first) in the top planes and the midpoint
/// pattern in the `si` redundancy planes.
pub fn encode_chunk(bits: &[bool], si: StabilityIndex) -> Result<u8> {
    let width = si.message_bits();
    if bits.len() != width {
        return Err(Error::invalid(format!(
            "chunk has {} bits, stability index {si} needs {width}",
            bits.len()
        )));
    }
    let value = bits.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b));
    Ok(encode_value(value, si))
}

#[inline]
pub(crate) fn encode_value(chunk: u8, si: StabilityIndex) -> u8 {
    let s = si.get();
    let midpoint = if s == 0 { 0 } else { 1u8 << (s - 1) };
    // for s = 0 the chunk already fills the byte
    ((u16::from(chunk) << s) as u8) | midpoint
}

#[inline]
pub(crate) fn decode_value(pixel: u8, si: StabilityIndex) -> u8 {
    ((u16::from(pixel)) >> si.get()) as u8
}

pub fn decode_chunk(pixel: u8, si: StabilityIndex) -> Vec<bool> {
    let width = si.message_bits();
    let value = decode_value(pixel, si);
    (0..width).rev().map(|i| (value >> i) & 1 == 1).collect()
}

/// Flat indices into an `H x W x C` image in traversal order.
pub fn slot_indices(padded: &PaddedGrille, channels: usize) -> impl Iterator<Item = usize> + '_ {
    let width = padded.shape().1;
    padded
        .support()
        .flat_map(move |(r, c)| (0..channels).map(move |ch| (r * width + c) * channels + ch))
}

/// A corrupted cover with message chunks written at grille positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedCarrier {
    pub image: Image,
    pub padded: PaddedGrille,
    pub si: StabilityIndex,
    pub message_len: usize,
}

fn check_spatial(image: &Image, padded: &PaddedGrille) -> Result<()> {
    let shape = image.shape();
    if (shape.height, shape.width) != padded.shape() {
        return Err(Error::shape(padded.shape(), (shape.height, shape.width)));
    }
    Ok(())
}

pub fn expand_message(
    message: &SecretMessage,
    cover: &Image,
    padded: &PaddedGrille,
    si: StabilityIndex,
) -> Result<ExpandedCarrier> {
    check_spatial(cover, padded)?;
    let channels = cover.shape().channels;
    let capacity = padded.capacity(channels, si);
    if message.len() > capacity {
        return Err(Error::CapacityExceeded {
            needed: message.len(),
            capacity,
        });
    }
    let width = si.message_bits();
    let mut image = cover.clone();
    let mut bits = message.bits().iter().copied();
    for idx in slot_indices(padded, channels) {
        let chunk = (0..width).fold(0u8, |acc, _| (acc << 1) | u8::from(bits.next().unwrap_or(false)));
        image.data_mut()[idx] = dequantize(encode_value(chunk, si));
    }
    Ok(ExpandedCarrier {
        image,
        padded: padded.clone(),
        si,
        message_len: message.len(),
    })
}

/// Read the first `expected_length` message bits back out of `stego`.
/// Only grille-support pixels are consulted.
pub fn extract_message(
    stego: &Image,
    padded: &PaddedGrille,
    si: StabilityIndex,
    expected_length: usize,
) -> Result<SecretMessage> {
    check_spatial(stego, padded)?;
    let channels = stego.shape().channels;
    let capacity = padded.capacity(channels, si);
    if expected_length > capacity {
        return Err(Error::CapacityExceeded {
            needed: expected_length,
            capacity,
        });
    }
    let width = si.message_bits();
    let mut bits = Vec::with_capacity(expected_length + width);
    for idx in slot_indices(padded, channels) {
        if bits.len() >= expected_length {
            break;
        }
        let value = decode_value(quantize(stego.data()[idx]), si);
        bits.extend((0..width).rev().map(|i| (value >> i) & 1 == 1));
    }
    bits.truncate(expected_length);
    Ok(SecretMessage::from_bits(bits))
}

/// Hamming distance over length; two empty messages agree perfectly.
pub fn bit_error_rate(sent: &SecretMessage, received: &SecretMessage) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::invalid(format!(
            "cannot compare messages of {} and {} bits",
            sent.len(),
            received.len()
        )));
    }
    if sent.is_empty() {
        return Ok(0.0);
    }
    let errors = sent.bits().iter().zip(received.bits()).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / sent.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grille::{derive_grille, load_grille, zero_pad};
    use crate::image::ImageShape;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn si(v: u8) -> StabilityIndex {
        StabilityIndex::new(v).unwrap()
    }

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_chunk(&bits("101"), si(5)).unwrap(), 0b1011_0000);
        assert_eq!(encode_chunk(&bits("101"), si(5)).unwrap(), 176);
        assert_eq!(encode_chunk(&bits("0"), si(7)).unwrap(), 64);
        assert_eq!(encode_chunk(&bits("1"), si(7)).unwrap(), 192);
        assert_eq!(encode_chunk(&bits("00000000"), si(0)).unwrap(), 0);
        assert_eq!(encode_chunk(&bits("10000001"), si(0)).unwrap(), 129);
        assert!(encode_chunk(&bits("10"), si(5)).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_chunk(176, si(5)), bits("101"));
        assert_eq!(decode_chunk(255, si(7)), bits("1"));
        assert_eq!(decode_chunk(0, si(7)), bits("0"));
    }

    #[test]
    fn codec_exhaustive_roundtrip() {
        let mut cases = 0;
        for s in StabilityIndex::all() {
            let width = s.message_bits();
            for value in 0..(1u16 << width) {
                let chunk: Vec<bool> = (0..width).rev().map(|i| (value >> i) & 1 == 1).collect();
                let byte = encode_chunk(&chunk, s).unwrap();
                assert_eq!(decode_chunk(byte, s), chunk);
                cases += 1;
            }
        }
        assert_eq!(cases, 510);
    }

    #[test]
    fn rounding_margin_holds_and_is_tight() {
        for s in 1..=7u8 {
            let s = si(s);
            // real-domain margin (2^si - 1) / 255 equals 2^(si-1) - 0.5 in 8-bit units
            let margin = f64::from((1u16 << s.get()) - 1) / 255.0;
            let top = (1u16 << s.message_bits()) - 1;
            for value in 0..=top as u8 {
                let byte = encode_value(value, s);
                let v = dequantize(byte);
                for frac in [-0.999, -0.5, 0.0, 0.5, 0.999] {
                    assert_eq!(decode_value(quantize(v + frac * margin), s), value);
                }
                if u16::from(value) < top {
                    assert_ne!(decode_value(quantize(v + 1.001 * margin), s), value);
                }
            }
        }
    }

    #[test]
    fn eq7_worked_example() {
        let g = load_grille(&[[1u8, 0, 1], [0, 1, 0], [1, 0, 1]]).unwrap();
        let padded = zero_pad(&g, (3, 3), None).unwrap();
        let cover = Image::filled(ImageShape::new(3, 3, 1), 0.0);
        let m = SecretMessage::from_bit_str("01011").unwrap();
        let carrier = expand_message(&m, &cover, &padded, si(7)).unwrap();
        let bytes = carrier.image.to_bytes();
        let support: Vec<u8> = [0, 2, 4, 6, 8].iter().map(|&i| bytes[i]).collect();
        assert_eq!(support, [64, 192, 64, 192, 192]);
        for i in [1, 3, 5, 7] {
            assert_eq!(carrier.image.data()[i], 0.0);
        }
        assert_eq!(extract_message(&carrier.image, &padded, si(7), 5).unwrap(), m);
    }

    #[test]
    fn empty_message_writes_zero_chunks() {
        let g = derive_grille(b"k", (4, 4), 0.5).unwrap();
        let padded = zero_pad(&g, (8, 8), None).unwrap();
        let cover = Image::filled(ImageShape::new(8, 8, 3), 0.25);
        let carrier = expand_message(&SecretMessage::default(), &cover, &padded, si(5)).unwrap();
        let slots: Vec<usize> = slot_indices(&padded, 3).collect();
        for (i, (&a, &b)) in carrier.image.data().iter().zip(cover.data()).enumerate() {
            if slots.contains(&i) {
                assert_eq!(quantize(a), encode_value(0, si(5)));
            } else {
                assert_eq!(a, b);
            }
        }
        assert!(extract_message(&carrier.image, &padded, si(5), 0).unwrap().is_empty());
    }

    #[test]
    fn capacity_overflow_reports_both_numbers() {
        let g = load_grille(&[[1u8, 1]]).unwrap();
        let padded = zero_pad(&g, (2, 2), None).unwrap();
        let cover = Image::filled(ImageShape::new(2, 2, 1), 0.0);
        let m = SecretMessage::zeros(3);
        match expand_message(&m, &cover, &padded, si(7)) {
            Err(Error::CapacityExceeded { needed, capacity }) => assert_eq!((needed, capacity), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert!(extract_message(&cover, &padded, si(7), 3).is_err());
    }

    #[test]
    fn all_zero_grille_extracts_empty() {
        let g = load_grille(&[[0u8; 3]; 3]).unwrap();
        let padded = zero_pad(&g, (5, 5), None).unwrap();
        let img = Image::filled(ImageShape::new(5, 5, 3), 0.3);
        assert!(extract_message(&img, &padded, si(3), 0).unwrap().is_empty());
    }

    #[test]
    fn traversal_order_is_pinned() {
        let g = load_grille(&[[0u8, 1], [1, 1]]).unwrap();
        let padded = zero_pad(&g, (3, 3), Some((1, 0))).unwrap();
        // support (1,1), (2,0), (2,1) in a 3-wide, 2-channel image
        let order: Vec<usize> = slot_indices(&padded, 2).collect();
        assert_eq!(order, vec![8, 9, 12, 13, 14, 15]);
    }

    #[test]
    fn ber_examples() {
        let a = SecretMessage::from_bit_str("0101").unwrap();
        let b = SecretMessage::from_bit_str("0111").unwrap();
        let c = SecretMessage::from_bit_str("1010").unwrap();
        assert_eq!(bit_error_rate(&a, &a).unwrap(), 0.0);
        assert_eq!(bit_error_rate(&a, &c).unwrap(), 1.0);
        assert_eq!(bit_error_rate(&a, &b).unwrap(), 0.25);
        assert!(bit_error_rate(&a, &SecretMessage::zeros(3)).is_err());
    }

    #[test]
    fn byte_packing() {
        let m = SecretMessage::from_hex("a5ff").unwrap();
        assert_eq!(m.to_bit_string(), "1010010111111111");
        assert_eq!(m.to_hex(), "a5ff");
        assert_eq!(SecretMessage::from_bit_str("1").unwrap().to_bytes(), vec![0x80]);
    }

    #[test]
    fn expand_extract_random_seeds() {
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let key: [u8; 8] = rng.gen();
            let g = derive_grille(&key, (4, 4), 0.5).unwrap();
            if g.popcount() * 3 * 3 < 24 {
                continue;
            }
            let padded = zero_pad(&g, (8, 8), None).unwrap();
            let cover = Image::filled(ImageShape::new(8, 8, 1), -0.2);
            let m = SecretMessage::random(&mut rng, 24.min(padded.capacity(1, si(5))));
            let carrier = expand_message(&m, &cover, &padded, si(5)).unwrap();
            assert_eq!(extract_message(&carrier.image, &padded, si(5), m.len()).unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn extract_inverts_expand(seed in any::<u64>(), s in 0u8..=7, channels in prop::sample::select(vec![1usize, 3]),
                                  frac in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let key: [u8; 4] = rng.gen();
            let g = derive_grille(&key, (5, 6), 0.5).unwrap();
            let padded = zero_pad(&g, (9, 10), None).unwrap();
            let cap = padded.capacity(channels, si(s));
            let m = SecretMessage::random(&mut rng, (cap as f64 * frac) as usize);
            let data: Vec<f64> = (0..90 * channels).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let cover = Image::new(ImageShape::new(9, 10, channels), data).unwrap();
            let carrier = expand_message(&m, &cover, &padded, si(s)).unwrap();
            prop_assert_eq!(extract_message(&carrier.image, &padded, si(s), m.len()).unwrap(), m);
        }

        #[test]
        fn extraction_ignores_non_support(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = derive_grille(&rng.gen::<[u8; 4]>(), (4, 4), 0.5).unwrap();
            let padded = zero_pad(&g, (8, 8), None).unwrap();
            let m = SecretMessage::random(&mut rng, padded.capacity(3, si(6)));
            let cover = Image::filled(ImageShape::new(8, 8, 3), 0.0);
            let mut carrier = expand_message(&m, &cover, &padded, si(6)).unwrap().image;
            let slots: Vec<usize> = slot_indices(&padded, 3).collect();
            for (i, v) in carrier.data_mut().iter_mut().enumerate() {
                if !slots.contains(&i) {
                    *v = rng.gen_range(-1.0..=1.0);
                }
            }
            prop_assert_eq!(extract_message(&carrier, &padded, si(6), m.len()).unwrap(), m);
        }
    }
}
