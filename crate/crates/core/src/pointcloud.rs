use crate::error::{GeomError, Result};
use crate::math::Vec3;

/// World-space points with per-point RGB in [0,1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredPointCloud {
    points: Vec<Vec3>,
    colors: Vec<Vec3>,
    source_pixel: Option<Vec<(usize, usize)>>,
}

impl ColoredPointCloud {
    pub fn new(points: Vec<Vec3>, colors: Vec<Vec3>) -> Result<Self> {
        if points.len() != colors.len() {
            return Err(GeomError::ShapeMismatch(format!(
                "{} points but {} colors",
                points.len(),
                colors.len()
            )));
        }
        Ok(Self {
            points,
            colors,
            source_pixel: None,
        })
    }

    pub fn with_source_pixels(mut self, pixels: Vec<(usize, usize)>) -> Result<Self> {
        if pixels.len() != self.points.len() {
            return Err(GeomError::ShapeMismatch("source pixel count".into()));
        }
        self.source_pixel = Some(pixels);
        Ok(self)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> &[Vec3] {
        &self.colors
    }

    pub fn source_pixels(&self) -> Option<&[(usize, usize)]> {
        self.source_pixel.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keep the points for which `keep[i]` is true.
    pub fn filter(&self, keep: &[bool]) -> Self {
        let pick = |i: usize| keep[i];
        Self {
            points: (0..self.len()).filter(|&i| pick(i)).map(|i| self.points[i]).collect(),
            colors: (0..self.len()).filter(|&i| pick(i)).map(|i| self.colors[i]).collect(),
            source_pixel: self.source_pixel.as_ref().map(|px| {
                (0..px.len()).filter(|&i| pick(i)).map(|i| px[i]).collect()
            }),
        }
    }

    /// Apply `f` to every point.
    pub fn map_points(mut self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        for p in &mut self.points {
            *p = f(p);
        }
        self
    }
}
