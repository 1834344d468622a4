use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::math::Vec3;

/// Background sentinel stored in depth buffers.
pub const DEPTH_BACKGROUND: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantic {
    Depth,
    Normal,
    Rgb,
    Mask,
    Instance,
}

impl Semantic {
    pub fn channels(self) -> usize {
        match self {
            Semantic::Normal | Semantic::Rgb => 3,
            _ => 1,
        }
    }
}

/// Row-major per-pixel buffer. Depth, mask and instance buffers have one
/// channel; normal and RGB buffers three (interleaved).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    semantic: Semantic,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, semantic: Semantic, fill: f64) -> Self {
        Self {
            width,
            height,
            semantic,
            data: vec![fill; width * height * semantic.channels()],
        }
    }

    pub fn from_data(
        width: usize,
        height: usize,
        semantic: Semantic,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != width * height * semantic.channels() {
            return Err(GeomError::InvalidImage(format!(
                "{}x{}x{} buffer given {} values",
                width,
                height,
                semantic.channels(),
                data.len()
            )));
        }
        let img = Self {
            width,
            height,
            semantic,
            data,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn depth(width: usize, height: usize) -> Self {
        Self::new(width, height, Semantic::Depth, DEPTH_BACKGROUND)
    }

    pub fn mask(width: usize, height: usize) -> Self {
        Self::new(width, height, Semantic::Mask, 0.0)
    }

    pub fn mask_from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::mask(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.data[y * width + x] = 1.0;
                }
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        match self.semantic {
            Semantic::Mask => {
                if self.data.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(GeomError::InvalidImage("mask is not {0,1}-valued".into()));
                }
            }
            Semantic::Normal => {
                for n in self.data.chunks_exact(3) {
                    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                    if len != 0.0 && (len - 1.0).abs() > 1e-4 {
                        return Err(GeomError::InvalidImage(format!(
                            "normal of length {len} at a foreground pixel"
                        )));
                    }
                }
            }
            _ => {}
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidImage("non-finite pixel value".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn semantic(&self) -> Semantic {
        self.semantic
    }

    pub fn channels(&self) -> usize {
        self.semantic.channels()
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels()]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let c = self.channels();
        self.data[(y * self.width + x) * c] = v;
    }

    pub fn get3(&self, x: usize, y: usize) -> Vec3 {
        let i = (y * self.width + x) * 3;
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn set3(&mut self, x: usize, y: usize, v: Vec3) {
        let i = (y * self.width + x) * 3;
        self.data[i] = v.x;
        self.data[i + 1] = v.y;
        self.data[i + 2] = v.z;
    }

    /// Value at flat pixel index (first channel).
    pub fn at(&self, idx: usize) -> f64 {
        self.data[idx * self.channels()]
    }

    pub fn at3(&self, idx: usize) -> Vec3 {
        let i = idx * 3;
        Vec3::new(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    /// Mask pixel test; for non-mask buffers, "non-zero first channel".
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.get(x, y) != 0.0
    }

    pub fn count_set(&self) -> usize {
        (0..self.len()).filter(|&i| self.at(i) != 0.0).count()
    }

    /// Foreground mask of a depth buffer (depth > 0).
    pub fn depth_foreground(&self) -> ImageBuffer {
        ImageBuffer::mask_from_fn(self.width, self.height, |x, y| self.get(x, y) > 0.0)
    }

    /// Foreground mask of a normal buffer (non-zero normal).
    pub fn normal_foreground(&self) -> ImageBuffer {
        ImageBuffer::mask_from_fn(self.width, self.height, |x, y| {
            self.get3(x, y).norm_squared() > 0.0
        })
    }

    pub fn mask_and(&self, other: &ImageBuffer) -> ImageBuffer {
        ImageBuffer::mask_from_fn(self.width, self.height, |x, y| {
            self.is_set(x, y) && other.is_set(x, y)
        })
    }

    pub fn mask_and_not(&self, other: &ImageBuffer) -> ImageBuffer {
        ImageBuffer::mask_from_fn(self.width, self.height, |x, y| {
            self.is_set(x, y) && !other.is_set(x, y)
        })
    }

    pub fn mask_or(&self, other: &ImageBuffer) -> ImageBuffer {
        ImageBuffer::mask_from_fn(self.width, self.height, |x, y| {
            self.is_set(x, y) || other.is_set(x, y)
        })
    }

    /// True if every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &ImageBuffer) -> bool {
        (0..self.len()).all(|i| self.at(i) == 0.0 || other.at(i) != 0.0)
    }
}
