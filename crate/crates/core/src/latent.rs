//! Latent-grid blending used around a multi-view denoiser: instance-to-group
//! composition and partial-RGB injection.

use std::path::Path;

use crate::error::{GeomError, Result};
use crate::image::ImageBuffer;

pub const DEFAULT_ALPHA: f64 = 0.8;

/// Row-major `height × width × channels` grid of latent values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    pub view_index: usize,
    pub timestep: i64,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height * width * channels == 0 {
            return Err(GeomError::InvalidParameter("latent grid has a zero dimension".into()));
        }
        if data.len() != height * width * channels {
            return Err(GeomError::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} grid",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite {
                term: "latent".into(),
                detail: format!("value {i}"),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            view_index: 0,
            timestep: 0,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn with_view(mut self, view_index: usize, timestep: i64) -> Self {
        self.view_index = view_index;
        self.timestep = timestep;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    fn same_shape(&self, other: &LatentGrid) -> Result<()> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return Err(GeomError::ShapeMismatch(format!(
                "latent {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        Ok(())
    }

    /// 12-byte little-endian `(h, w, c)` u32 header followed by f32 LE values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(GeomError::InvalidParameter("latent file shorter than its header".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (h, w, c) = (dim(0), dim(1), dim(2));
        let body = &bytes[12..];
        if body.len() != 4 * h * w * c {
            return Err(GeomError::ShapeMismatch(format!(
                "latent header {h}x{w}x{c} but {} payload bytes",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(h, w, c, data)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GeomError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| GeomError::io(path, e))
    }
}

/// Binary cell mask at latent resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl RegionMask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(GeomError::ShapeMismatch(format!(
                "{} cells for a {height}x{width} mask",
                cells.len()
            )));
        }
        Ok(Self { height, width, cells })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let cells = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, cells }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    fn fits(&self, grid: &LatentGrid) -> Result<()> {
        if (self.height, self.width) != (grid.height, grid.width) {
            return Err(GeomError::ShapeMismatch(format!(
                "mask {}x{} vs latent {}x{}",
                self.height, self.width, grid.height, grid.width
            )));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GeomError::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

fn blend(alpha: f64, a: f32, b: f32) -> f32 {
    (alpha * a as f64 + (1.0 - alpha) * b as f64) as f32
}

/// How cells covered by several instance masks are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overlap {
    /// Instances applied in order; the last covering instance wins.
    #[default]
    Priority,
    /// Literal sum over instances, which counts overlapping cells twice.
    Sum,
}

/// Blend each instance latent into the group latent inside its mask:
/// `α·z_inst + (1−α)·z_group` in the mask, `z_group` elsewhere.
pub fn compose_instance_to_group(
    group: &LatentGrid,
    instances: &[(LatentGrid, RegionMask)],
    alpha: f64,
) -> Result<LatentGrid> {
    compose_instance_to_group_with(group, instances, alpha, Overlap::Priority)
}

pub fn compose_instance_to_group_with(
    group: &LatentGrid,
    instances: &[(LatentGrid, RegionMask)],
    alpha: f64,
    overlap: Overlap,
) -> Result<LatentGrid> {
    check_alpha(alpha)?;
    for (z, m) in instances {
        group.same_shape(z)?;
        m.fits(group)?;
    }
    let c = group.channels;
    let mut out = group.clone();
    match overlap {
        Overlap::Priority => {
            for (z, m) in instances {
                for (cell, _) in m.cells.iter().enumerate().filter(|(_, &b)| b) {
                    for k in cell * c..(cell + 1) * c {
                        out.data[k] = blend(alpha, z.data[k], group.data[k]);
                    }
                }
            }
        }
        Overlap::Sum => {
            for cell in 0..group.height * group.width {
                let hits: Vec<&LatentGrid> = instances
                    .iter()
                    .filter(|(_, m)| m.cells[cell])
                    .map(|(z, _)| z)
                    .collect();
                if hits.is_empty() {
                    continue;
                }
                for k in cell * c..(cell + 1) * c {
                    let g = group.data[k] as f64;
                    let s: f64 = hits.iter().map(|z| alpha * z.data[k] as f64 + (1.0 - alpha) * g).sum();
                    out.data[k] = (s + (1.0 - hits.len() as f64) * g) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// `m·(α·raw + (1−α)·current) + (1−m)·current`.
pub fn inject_partial_rgb(
    current: &LatentGrid,
    raw_noisy: &LatentGrid,
    mask: &RegionMask,
    alpha_pcd: f64,
) -> Result<LatentGrid> {
    check_alpha(alpha_pcd)?;
    current.same_shape(raw_noisy)?;
    mask.fits(current)?;
    let c = current.channels;
    let mut out = current.clone();
    for (cell, _) in mask.cells.iter().enumerate().filter(|(_, &b)| b) {
        for k in cell * c..(cell + 1) * c {
            out.data[k] = blend(alpha_pcd, raw_noisy.data[k], current.data[k]);
        }
    }
    Ok(out)
}

/// Block-max pooling of a pixel mask to `height × width` cells.
pub fn downsample_mask_to_latent(mask: &ImageBuffer, height: usize, width: usize) -> Result<RegionMask> {
    if height == 0
        || width == 0
        || !mask.height().is_multiple_of(height)
        || !mask.width().is_multiple_of(width)
    {
        return Err(GeomError::InvalidParameter(format!(
            "mask {}x{} is not an integer multiple of {width}x{height}",
            mask.width(),
            mask.height()
        )));
    }
    let (fy, fx) = (mask.height() / height, mask.width() / width);
    Ok(RegionMask::from_fn(height, width, |cy, cx| {
        (cy * fy..(cy + 1) * fy).any(|y| (cx * fx..(cx + 1) * fx).any(|x| mask.is_set(x, y)))
    }))
}
