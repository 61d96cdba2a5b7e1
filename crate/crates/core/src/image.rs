use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{Scalar, Tensor};

/// 8-bit interleaved RGB raster.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl core::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("image buffer of {len} bytes does not match {width}x{height} RGB")]
pub struct ImageSizeError {
    pub width: usize,
    pub height: usize,
    pub len: usize,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageSizeError> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(ImageSizeError { width, height, len: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = vec![0; width * height * 3];
        for px in data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Sub-image `[x1, x2) x [y1, y2)`. Caller guarantees the box is inside.
    pub fn crop(&self, x1: usize, y1: usize, x2: usize, y2: usize) -> Self {
        Self::from_fn(x2 - x1, y2 - y1, |x, y| self.pixel(x1 + x, y1 + y))
    }

    /// `[height, width, 3]` tensor with intensities scaled into `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let scale = T::one() / T::of(255.0);
        let data = self.data.iter().map(|&v| T::of(f64::from(v)) * scale).collect();
        Tensor::new([self.height, self.width, 3], data).expect("dimensions are positive")
    }
}
