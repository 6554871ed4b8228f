use crate::{Error, Result};

/// Square RGB image, values in `[0, 1]`, stored row-major by `(y, x, channel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    size: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size * 3 {
            return Err(Error::contract(format!(
                "image of size {size} needs {} values, got {}",
                size * size * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image { size, pixels })
    }

    /// Clamps every value into `[0, 1]` instead of rejecting.
    pub fn clamped(size: usize, mut pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), size * size * 3);
        pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Image { size, pixels }
    }

    pub fn filled(size: usize, value: f64) -> Self {
        Self::clamped(size, vec![value; size * size * 3])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.size + x) * 3 + c]
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.size + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}
