//! Pinhole and orthographic cameras.
//!
//! Camera space is right-handed with +X right, +Y down and +Z forward, so the
//! depth of a point is its camera-space Z. World points map to camera space as
//! `R·p + T`. Image coordinates are continuous pixel units: pixel `(x, y)`
//! covers `[x, x+1) × [y, y+1)` and is sampled at its centre.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Projection {
    Perspective { fx: f64, fy: f64, cx: f64, cy: f64 },
    /// `scale` is pixels per world unit.
    Orthographic { scale: f64, cx: f64, cy: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub projection: Projection,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        projection: Projection,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            projection,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn perspective(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        Self::new(
            Projection::Perspective { fx, fy, cx, cy },
            rotation,
            translation,
            width,
            height,
        )
    }

    /// Orthographic camera with its principal point at the image centre.
    pub fn orthographic(
        scale: f64,
        rotation: Mat3,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        Self::new(
            Projection::Orthographic {
                scale,
                cx: width as f64 / 2.0,
                cy: height as f64 / 2.0,
            },
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        if (rtr - Mat3::identity()).abs().max() > 1e-6 {
            return Err(GeomError::InvalidCamera("rotation is not orthonormal".into()));
        }
        if self.rotation.determinant() < 0.0 {
            return Err(GeomError::InvalidCamera("rotation has negative determinant".into()));
        }
        match self.projection {
            Projection::Perspective { fx, fy, cx, cy } => {
                if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
                    return Err(GeomError::InvalidCamera(
                        "focal lengths must be strictly positive".into(),
                    ));
                }
            }
            Projection::Orthographic { scale, cx, cy } => {
                if !(scale > 0.0) || !cx.is_finite() || !cy.is_finite() {
                    return Err(GeomError::InvalidCamera(
                        "orthographic scale must be strictly positive".into(),
                    ));
                }
            }
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeomError::InvalidCamera("image size must be non-zero".into()));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(GeomError::InvalidCamera("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn is_orthographic(&self) -> bool {
        matches!(self.projection, Projection::Orthographic { .. })
    }

    pub fn with_image_size(mut self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        self.projection = match self.projection {
            Projection::Perspective { fx, fy, cx, cy } => Projection::Perspective {
                fx: fx * sx,
                fy: fy * sy,
                cx: cx * sx,
                cy: cy * sy,
            },
            Projection::Orthographic { scale, cx, cy } => Projection::Orthographic {
                scale: scale * sx.min(sy),
                cx: cx * sx,
                cy: cy * sy,
            },
        };
        self.width = width;
        self.height = height;
        self
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, pc: &Vec3) -> Vec3 {
        self.rotation.transpose() * (pc - self.translation)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (camera +Z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    /// Unit direction from a world point towards the camera.
    pub fn direction_to_camera(&self, p: &Vec3) -> Vec3 {
        match self.projection {
            Projection::Orthographic { .. } => -self.forward(),
            Projection::Perspective { .. } => (self.center() - p).normalize(),
        }
    }

    /// Camera-space point to (u, v, depth).
    pub fn project_camera(&self, pc: &Vec3) -> Vec3 {
        match self.projection {
            Projection::Perspective { fx, fy, cx, cy } => {
                Vec3::new(cx + fx * pc.x / pc.z, cy + fy * pc.y / pc.z, pc.z)
            }
            Projection::Orthographic { scale, cx, cy } => {
                Vec3::new(cx + scale * pc.x, cy + scale * pc.y, pc.z)
            }
        }
    }

    /// Jacobian of `project_camera` with respect to the camera-space point.
    pub(crate) fn project_jacobian(&self, pc: &Vec3) -> Mat3 {
        match self.projection {
            Projection::Perspective { fx, fy, .. } => {
                let iz = 1.0 / pc.z;
                Mat3::new(
                    fx * iz,
                    0.0,
                    -fx * pc.x * iz * iz,
                    0.0,
                    fy * iz,
                    -fy * pc.y * iz * iz,
                    0.0,
                    0.0,
                    1.0,
                )
            }
            Projection::Orthographic { scale, .. } => {
                Mat3::new(scale, 0.0, 0.0, 0.0, scale, 0.0, 0.0, 0.0, 1.0)
            }
        }
    }

    /// World point to (u, v, depth).
    pub fn project(&self, p: &Vec3) -> Vec3 {
        self.project_camera(&self.to_camera(p))
    }

    /// Image position (u, v) at camera depth to a world point.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let pc = match self.projection {
            Projection::Perspective { fx, fy, cx, cy } => {
                Vec3::new((u - cx) * depth / fx, (v - cy) * depth / fy, depth)
            }
            Projection::Orthographic { scale, cx, cy } => {
                Vec3::new((u - cx) / scale, (v - cy) / scale, depth)
            }
        };
        self.to_world(&pc)
    }

    /// Pixel containing the continuous image position, if inside the image.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        if u.is_finite() && v.is_finite() && u >= 0.0 && v >= 0.0 {
            let (x, y) = (u.floor() as usize, v.floor() as usize);
            if x < self.width && y < self.height {
                return Some((x, y));
            }
        }
        None
    }
}
