//! Detection-side machinery: the UnfoldSoftmax loss, keypoint NMS, the
//! flip-merged keypoint cache, score-map keypoint extraction and bilinear
//! descriptor sampling.

mod keypoints;
mod sample;
mod unfold;

pub use keypoints::{extract_keypoints, merge_flip_cache, nms, rasterize, unflip};
pub use sample::{bilinear_sample, BorderMode};
pub use unfold::{
    unfold_softmax_fast, unfold_softmax_grad, unfold_softmax_naive, DEFAULT_KERNEL, EXP_OVERFLOW_LIMIT,
};

use crate::error::{Error, Result};

/// Detection threshold used at inference.
pub const DEFAULT_THRESHOLD: f64 = -5.0;
/// NMS half-window used at inference and for the keypoint cache.
pub const DEFAULT_NMS_SIZE: usize = 2;
/// Keypoints kept per image at inference.
pub const DEFAULT_TOP_K: usize = 4096;

/// A single-channel `height x width` grid of finite reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::BadDimension(format!("empty raster {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::BadDimension(format!(
                "{} values for a {height}x{width} raster",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at row `y`, column `x`.
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// A `height x width` grid of {0, 1}, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryHeatmap {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryHeatmap {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::BadDimension(format!("empty heatmap {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::BadDimension(format!(
                "{} cells for a {height}x{width} heatmap",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|&v| v > 1) {
            return Err(Error::Format(format!("heatmap cell {index} is not 0 or 1")));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize) {
        self.values[y * self.width + x] = 1;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width) {
            values.extend(row.iter().rev());
        }
        Self {
            height: self.height,
            width: self.width,
            values,
        }
    }
}

/// A keypoint in pixel coordinates: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Self { x, y, score }
    }
}

pub type KeypointList = Vec<Keypoint>;

/// Fails with the index of the first keypoint outside `[0, width) x [0, height)`
/// or carrying a non-finite value.
pub fn check_bounds(kps: &[Keypoint], width: usize, height: usize) -> Result<()> {
    for (index, k) in kps.iter().enumerate() {
        let ok = k.x.is_finite()
            && k.y.is_finite()
            && k.score.is_finite()
            && k.x >= 0.0
            && k.y >= 0.0
            && k.x < width as f64
            && k.y < height as f64;
        if !ok {
            return Err(Error::OutOfBounds { index });
        }
    }
    Ok(())
}
