use crate::camera::Camera;
use crate::error::{GeomError, Result};
use crate::math::{Mat3, Vec3};

use super::Normalization;

pub const RIG_AZIMUTHS: [f64; 6] = [0.0, 45.0, 90.0, 180.0, 270.0, 315.0];
pub const RIG_DISTANCE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RigView {
    pub azimuth_deg: f64,
    pub camera: Camera,
}

/// Six orthographic cameras around the origin plus the scene normalization
/// they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalRig {
    pub views: Vec<RigView>,
    pub normalization: Normalization,
}

impl CanonicalRig {
    pub fn cameras(&self) -> impl Iterator<Item = &Camera> {
        self.views.iter().map(|v| &v.camera)
    }

    pub fn camera(&self, view: usize) -> Option<&Camera> {
        self.views.get(view).map(|v| &v.camera)
    }

    pub fn resolution(&self) -> (usize, usize) {
        let c = &self.views[0].camera;
        (c.width, c.height)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// The same views re-posed to look at the un-normalized scene; the
    /// returned rig carries the identity normalization.
    pub fn in_world(&self) -> Result<CanonicalRig> {
        let views = self
            .views
            .iter()
            .map(|v| {
                Ok(RigView {
                    azimuth_deg: v.azimuth_deg,
                    camera: self.normalization.world_camera(&v.camera)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CanonicalRig {
            views,
            normalization: Normalization::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.len() != RIG_AZIMUTHS.len() {
            return Err(GeomError::InvalidCamera(format!(
                "rig needs {} views, got {}",
                RIG_AZIMUTHS.len(),
                self.views.len()
            )));
        }
        for (v, az) in self.views.iter().zip(RIG_AZIMUTHS) {
            if (v.azimuth_deg - az).abs() > 1e-9 {
                return Err(GeomError::InvalidCamera(format!(
                    "unexpected rig azimuth {} (expected {az})",
                    v.azimuth_deg
                )));
            }
            if !v.camera.is_orthographic() {
                return Err(GeomError::InvalidCamera("rig cameras must be orthographic".into()));
            }
            v.camera.validate()?;
        }
        Ok(())
    }
}

/// World-to-camera pose looking from `eye` at `target`. The camera's +Z axis
/// points at the target and its +Y axis is opposite to `up` (image rows grow
/// downwards). `R·eye + T = 0`.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Result<(Mat3, Vec3)> {
    let d = target - eye;
    if !(d.norm() > 0.0) {
        return Err(GeomError::InvalidParameter("eye and target coincide".into()));
    }
    let f = d.normalize();
    let x = f.cross(up);
    if x.norm() < 1e-9 * up.norm().max(1e-300) || !(up.norm() > 0.0) {
        return Err(GeomError::InvalidParameter(
            "up vector is parallel to the viewing direction".into(),
        ));
    }
    let x = x.normalize();
    let y = f.cross(&x);
    let r = Mat3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
    let t = -(r * eye);
    Ok((r, t))
}

/// Orthographic rig at the fixed azimuths, zero elevation, all looking at the
/// origin with +Y up. Azimuth θ places the camera at `distance·(sin θ, 0, cos θ)`;
/// the frame spans `[-1, 1]` of the canonical cube vertically.
pub fn build_rig(distance: f64, width: usize, height: usize) -> Result<CanonicalRig> {
    if !(distance > 0.0) {
        return Err(GeomError::InvalidParameter(format!(
            "rig distance must be > 0, got {distance}"
        )));
    }
    let scale = height as f64 / 2.0;
    let views = RIG_AZIMUTHS
        .iter()
        .map(|&az| {
            let th = az.to_radians();
            let eye = Vec3::new(th.sin(), 0.0, th.cos()) * distance;
            let (r, t) = look_at(&eye, &Vec3::zeros(), &Vec3::y())?;
            Ok(RigView {
                azimuth_deg: az,
                camera: Camera::orthographic(scale, r, t, width, height)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CanonicalRig {
        views,
        normalization: Normalization::default(),
    })
}
