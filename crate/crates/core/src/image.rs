//! Real-valued raster type and the mapping between the `[-1, 1]` working
//! domain and 8-bit pixel values.
//!
//! Pixels are stored row-major with channels interleaved (`H x W x C`), so
//! index `(row, col, ch)` lives at `(row * W + col) * C + ch`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl std::fmt::Debug for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(self, f)
    }
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub const fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self {
            row,
            col,
            height,
            width,
        }
    }

    /// Central square with half the side of the image, e.g. 32x32 inside 64x64.
    pub fn central_half(height: usize, width: usize) -> Self {
        Self::centered(height, width, height / 2, width / 2)
    }

    pub fn centered(height: usize, width: usize, rows: usize, cols: usize) -> Self {
        Self {
            row: height.saturating_sub(rows) / 2,
            col: width.saturating_sub(cols) / 2,
            height: rows,
            width: cols,
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row + self.height <= height && self.col + self.width <= width
    }

    pub(crate) fn check_within(&self, height: usize, width: usize) -> Result<()> {
        if self.fits(height, width) {
            Ok(())
        } else {
            Err(Error::WindowOutOfBounds {
                rows: self.height,
                cols: self.width,
                row: self.row,
                col: self.col,
                height,
                width,
                row_overflow: (self.row + self.height).saturating_sub(height),
                col_overflow: (self.col + self.width).saturating_sub(width),
            })
        }
    }
}

/// Map a working-domain value to its 8-bit representative:
/// `round((v + 1) * 127.5)`, half away from zero, saturating at 0 and 255.
pub fn quantize(v: f64) -> u8 {
    let scaled = ((v + 1.0) * 127.5).round();
    scaled.clamp(0.0, 255.0) as u8
}

pub fn dequantize(byte: u8) -> f64 {
    f64::from(byte) / 127.5 - 1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    shape: ImageShape,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: ImageShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.shape.width + col) * self.shape.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
        self
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Snap every value onto the 8-bit lattice.
    pub fn quantized(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| dequantize(quantize(v))).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(shape: ImageShape, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != shape.len() {
            return Err(Error::shape(shape.len(), bytes.len()));
        }
        Ok(Self {
            shape,
            data: bytes.iter().map(|&b| dequantize(b)).collect(),
        })
    }

    pub fn to_dynamic(&self) -> Result<image::DynamicImage> {
        let (w, h) = (self.shape.width as u32, self.shape.height as u32);
        let bytes = self.to_bytes();
        let buf = match self.shape.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(image::DynamicImage::ImageLuma8),
            3 => image::RgbImage::from_raw(w, h, bytes).map(image::DynamicImage::ImageRgb8),
            c => return Err(Error::invalid(format!("cannot rasterize {c}-channel image"))),
        };
        buf.ok_or_else(|| Error::invalid("raster buffer size mismatch"))
    }

    /// Convert a decoded raster without resampling; alpha is dropped.
    pub fn from_dynamic(img: &image::DynamicImage, channels: usize) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let shape = ImageShape::new(h, w, channels);
        match channels {
            1 => Self::from_bytes(shape, img.to_luma8().as_raw()),
            3 => Self::from_bytes(shape, img.to_rgb8().as_raw()),
            c => Err(Error::invalid(format!("unsupported channel count {c}"))),
        }
    }

    pub fn l1_distance(&self, other: &Image) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_pins_rounding() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        // (0 + 1) * 127.5 = 127.5 rounds half away from zero
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(-2.0), 0);
        assert_eq!(quantize(3.0), 255);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn dequantize_is_right_inverse() {
        for b in 0..=255u8 {
            assert_eq!(quantize(dequantize(b)), b);
        }
    }

    #[test]
    fn rect_helpers() {
        let r = Rect::central_half(64, 64);
        assert_eq!(r, Rect::new(16, 16, 32, 32));
        assert!(r.contains(16, 47));
        assert!(!r.contains(48, 20));
        assert!(Rect::new(60, 60, 8, 8).check_within(64, 64).is_err());
    }

    #[test]
    fn raster_roundtrip_rgb() {
        let shape = ImageShape::new(3, 2, 3);
        let bytes: Vec<u8> = (0..18).map(|i| (i * 13) as u8).collect();
        let img = Image::from_bytes(shape, &bytes).unwrap();
        let back = Image::from_dynamic(&img.to_dynamic().unwrap(), 3).unwrap();
        assert_eq!(back.to_bytes(), bytes);
    }
}
