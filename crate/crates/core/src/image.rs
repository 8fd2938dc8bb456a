//! Row-major `height x width x channels` grids.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// A row-major `height x width x channels` grid of finite values. Images
/// proper live in `[0, 1]`; feature maps reuse the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Invalid(format!(
                "empty grid {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        ensure_finite("grid", &data)?;
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let i = (r * self.width + c) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel `ch` at `(r, c)` with coordinates clamped into the grid.
    pub fn at_clamped(&self, r: isize, c: isize, ch: usize) -> f64 {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.data[(r * self.width + c) * self.channels + ch]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.height, self.width, self.channels) == (other.height, other.width, other.channels)
    }

    pub fn check_unit_range(&self) -> Result<()> {
        if self.data.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(())
        } else {
            Err(Error::Invalid("image values must lie in [0, 1]".into()))
        }
    }

    /// Maps `[0, 1]` intensities to the `[-1, 1]` range the diffusion models use.
    pub fn to_model_space(&self) -> Vec<f64> {
        self.data.iter().map(|v| 2.0 * v - 1.0).collect()
    }

    /// Inverse of [`Image::to_model_space`], clamped into `[0, 1]`.
    pub fn from_model_space(
        height: usize,
        width: usize,
        channels: usize,
        x: &[f64],
    ) -> Result<Self> {
        Image::new(
            height,
            width,
            channels,
            x.iter()
                .map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
                .collect(),
        )
    }
}
