use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{Camera, Projection};
use crate::error::{GeomError, Result};
use crate::math::Vec3;
use crate::mesh::{bounding_box, Scene};

pub const DEFAULT_PADDING: f64 = 0.05;

/// `v ↦ (v − center) / (scale / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: 2.0,
        }
    }
}

impl Normalization {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / (self.scale / 2.0)
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p * (self.scale / 2.0) + self.center
    }

    pub fn apply_scene(&self, scene: Scene) -> Result<Scene> {
        scene.map_instances(|m| {
            let v = m.vertices().iter().map(|p| self.apply(p)).collect();
            m.with_vertices(v)
        })
    }

    pub fn invert_scene(&self, scene: Scene) -> Result<Scene> {
        scene.map_instances(|m| {
            let v = m.vertices().iter().map(|p| self.invert(p)).collect();
            m.with_vertices(v)
        })
    }

    /// Camera that sees world-space points where `camera` sees their
    /// normalized images. Pixels and normals agree; depths are in world units.
    pub fn world_camera(&self, camera: &Camera) -> Result<Camera> {
        let k = self.scale / 2.0;
        let projection = match camera.projection {
            Projection::Orthographic { scale, cx, cy } => Projection::Orthographic { scale: scale / k, cx, cy },
            p => p,
        };
        Camera::new(
            projection,
            camera.rotation,
            camera.translation * k - camera.rotation * self.center,
            camera.width,
            camera.height,
        )
    }

    /// Normalization fitted to the scene's bounding box.
    pub fn fit(scene: &Scene, padding: f64) -> Result<Self> {
        if !(padding >= 0.0) {
            return Err(GeomError::InvalidParameter(format!(
                "padding must be >= 0, got {padding}"
            )));
        }
        let bb = bounding_box(scene)?;
        let extent = bb.extent().max();
        if !(extent > 0.0) {
            return Err(GeomError::Degenerate("scene has zero extent".into()));
        }
        Ok(Self {
            center: bb.center(),
            scale: extent * (1.0 + padding),
        })
    }
}

/// Map the scene into `[-1, 1]³` around its bounding-box centre.
pub fn normalize_scene(scene: Scene, padding: f64) -> Result<(Scene, Normalization)> {
    let n = Normalization::fit(&scene, padding)?;
    Ok((n.apply_scene(scene)?, n))
}

/// Like [`normalize_scene`] but shifts the centre by a uniform random offset
/// of up to `max_shift` (in normalized units) per axis. Meant for dataset
/// synthesis; the output may leave the unit cube.
pub fn normalize_scene_jittered(
    scene: Scene,
    padding: f64,
    max_shift: f64,
    seed: u64,
) -> Result<(Scene, Normalization)> {
    let mut n = Normalization::fit(&scene, padding)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = Vec3::from_fn(|_, _| rng.gen_range(-1.0..=1.0) * max_shift);
    n.center -= shift * (n.scale / 2.0);
    Ok((n.apply_scene(scene)?, n))
}
