use crate::camera::Camera;
use crate::error::{GeomError, Result};
use crate::image::ImageBuffer;
use crate::math::Vec3;
use crate::mesh::{Mesh, Scene};

use super::{rasterize, RasterOptions};

/// Per-vertex visibility against an already rendered depth buffer.
///
/// The depth compared against is the nearest foreground depth among the 2×2
/// pixel centres surrounding the projection, so vertices lying exactly on a
/// pixel corner or the image border are still resolved.
pub fn vertex_visibility_from_depth(
    vertices: &[Vec3],
    depth: &ImageBuffer,
    camera: &Camera,
    eps: f64,
) -> Vec<bool> {
    let (w, h) = (depth.width() as f64, depth.height() as f64);
    vertices
        .iter()
        .map(|v| {
            let p = camera.project(v);
            if !(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h && p.z > 0.0) {
                return false;
            }
            let x0 = (p.x - 0.5).floor() as i64;
            let y0 = (p.y - 0.5).floor() as i64;
            let mut best = f64::INFINITY;
            for y in y0..=y0 + 1 {
                for x in x0..=x0 + 1 {
                    if x < 0 || y < 0 || x >= depth.width() as i64 || y >= depth.height() as i64 {
                        continue;
                    }
                    let d = depth.get(x as usize, y as usize);
                    if d > 0.0 {
                        best = best.min(d);
                    }
                }
            }
            best.is_finite() && (best - p.z).abs() < eps
        })
        .collect()
}

/// Visibility of `mesh`'s vertices when the whole `scene` is rendered from `camera`.
pub fn vertex_visibility(
    mesh: &Mesh,
    scene: &Scene,
    camera: &Camera,
    eps: f64,
) -> Result<Vec<bool>> {
    if scene.instance(mesh.instance_id()).is_none() {
        return Err(GeomError::InvalidScene(format!(
            "instance {} is not part of the scene",
            mesh.instance_id()
        )));
    }
    let out = rasterize(scene, camera, &RasterOptions::default())?;
    Ok(vertex_visibility_from_depth(
        mesh.vertices(),
        &out.depth,
        camera,
        eps,
    ))
}
