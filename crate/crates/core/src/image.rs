//! RGB float images and binary PPM output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height × width × 3` color buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    img.data[(y * width + x) * 3 + c] = f(x, y, c);
                }
            }
        }
        img
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * 3 + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.data.len() != other.data.len() {
            return Err(Error::DimensionMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Luma plane `0.299 R + 0.587 G + 0.114 B`.
    pub fn luma(&self) -> Vec<f64> {
        self.data.chunks_exact(3).map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]).collect()
    }

    /// Binary P6 encoding: `floor(v·255 + 0.5)` after clamping to `[0, 1]`.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8));
        out
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_rounding_contract() {
        let mut img = ImageBuffer::new(2, 1);
        img.data = vec![0.0, 1.0, 0.5, -0.3, 1.7, 0.998];
        let bytes = img.to_ppm();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 255, 128, 0, 255, 254]);
    }

    #[test]
    fn dims_check() {
        assert!(ImageBuffer::new(4, 4).same_dims(&ImageBuffer::new(4, 5)).is_err());
        assert!(ImageBuffer::new(4, 4).same_dims(&ImageBuffer::new(4, 4)).is_ok());
    }
}
