//! Dense pixel grids with channel-fastest layout.
//!
//! Index `(y, x, c)` lives at `(y * width + x) * channels + c`, so a single
//! channel is a strided scan with stride `channels`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return param_err(format!("grid must be non-empty, got {height}x{width}"));
        }
        if channels != 1 && channels != 3 {
            return param_err(format!("channels must be 1 or 3, got {channels}"));
        }
        Ok(Self { height, width, channels })
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    shape: Shape,
    data: Vec<f64>,
    pixel_domain: bool,
}

impl ImageGrid {
    pub fn from_vec(shape: Shape, data: Vec<f64>, pixel_domain: bool) -> Result<Self> {
        if data.len() != shape.len() {
            return dim_err(format!("{} values for shape {shape}", data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return param_err(format!("non-finite value at index {i}"));
        }
        if pixel_domain && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return param_err("pixel-domain grid has values outside [0,1]");
        }
        Ok(Self { shape, data, pixel_domain })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let pixel_domain = (0.0..=1.0).contains(&value);
        Self { shape, data: vec![value; shape.len()], pixel_domain }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()], pixel_domain: false }
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>, pixel_domain: bool) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self { shape, data, pixel_domain }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_domain(&self) -> bool {
        self.pixel_domain
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.shape.width + x) * self.shape.channels + c]
    }

    /// Values of one channel in raster order.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.shape.channels).copied().collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn clamped(&self) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            pixel_domain: true,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_raw(self.shape, self.data.iter().map(|v| v * factor).collect(), false)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return dim_err(format!("shape {} vs {}", self.shape, other.shape));
        }
        Ok(())
    }
}

/// Elementwise `a + b` clamped to `[0,1]`.
pub fn add_clamped(a: &ImageGrid, b: &ImageGrid) -> Result<ImageGrid> {
    a.check_same_shape(b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| (x + y).clamp(0.0, 1.0)).collect();
    Ok(ImageGrid::from_raw(a.shape, data, true))
}

/// Elementwise `x - reference`, unclamped.
pub fn residual(x: &ImageGrid, reference: &ImageGrid) -> Result<ImageGrid> {
    x.check_same_shape(reference)?;
    let data = x.data.iter().zip(&reference.data).map(|(a, b)| a - b).collect();
    Ok(ImageGrid::from_raw(x.shape, data, false))
}
