//! Linear RGB images stored as row-major `f64` triples.

use crate::error::{bail, Result};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    /// Builds an image from interleaved RGB data. Values must be finite but
    /// may leave `[0, 1]`; use [`Image::is_unit_range`] where that matters.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            bail!(Parameter, "image dimensions must be nonzero");
        }
        if data.len() != width * height * Self::CHANNELS {
            bail!(Parameter, "expected {} values for {width}x{height}, got {}", width * height * 3, data.len());
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(Parameter, "image contains non-finite values");
        }
        Ok(Self { width, height, data })
    }

    /// Like [`Image::from_data`] but also requires every value in `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let img = Self::from_data(width, height, data)?;
        if !img.is_unit_range() {
            bail!(Parameter, "image values must lie in [0, 1]");
        }
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = vec![0.0; width * height * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
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

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clipped(&self) -> Image {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Bilinear sample with clamp-to-edge addressing, pixel centers at `i + 0.5`.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = libm::floor(fx) as usize;
        let y0 = libm::floor(fy) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let top = self.get(x0, y0, c) * (1.0 - tx) + self.get(x1, y0, c) * tx;
        let bot = self.get(x0, y1, c) * (1.0 - tx) + self.get(x1, y1, c) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Per-pixel luma with weights 0.299 / 0.587 / 0.114.
    pub fn luma(&self) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }
}
