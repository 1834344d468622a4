//! Frozen-coverage differentiation of rendered depth and normals.
//!
//! The face-to-pixel assignment (and each face's front/back flip) is captured
//! once and held fixed; depth and normals at covered pixels are then smooth
//! functions of the vertex positions through the screen barycentrics, the
//! perspective-correct weights and the area-weighted vertex normals.

use crate::camera::Camera;
use crate::image::DEPTH_BACKGROUND;
use crate::math::{Vec2, Vec3};
use crate::mesh::{vertex_normal_sums, Mesh, DEGENERATE_AREA};
use crate::render::{edge, pixel_center, shade, shade_normal, zbuffer, Prepared};

/// Frozen face-to-pixel assignment of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    width: usize,
    height: usize,
    /// Global face index per pixel, -1 at background.
    face_map: Vec<i32>,
    /// +1 for front-facing faces, -1 for back faces, per global face.
    flips: Vec<f64>,
    /// Owning mesh (position in the mesh list) per global face.
    owner: Vec<usize>,
}

/// Depth and normal values at covered pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadedPixels {
    /// Camera depth, `DEPTH_BACKGROUND` where uncovered.
    pub depth: Vec<f64>,
    /// Camera-space unit normals, zero where uncovered.
    pub normal: Vec<Vec3>,
}

impl Coverage {
    /// Rasterize `meshes` and freeze the result.
    pub fn capture(meshes: &[&Mesh], camera: &Camera) -> Self {
        let prep = Prepared::new(meshes, camera);
        let (_, face_map) = zbuffer(&prep, camera.width, camera.height);
        let mut owner = Vec::with_capacity(prep.faces.len());
        for (k, m) in meshes.iter().enumerate() {
            owner.extend(std::iter::repeat_n(k, m.faces().len()));
        }
        let flips = prep
            .faces
            .iter()
            .map(|f| match f {
                Some(f) if !f.front => -1.0,
                _ => 1.0,
            })
            .collect();
        Self {
            width: camera.width,
            height: camera.height,
            face_map,
            flips,
            owner,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn face_map(&self) -> &[i32] {
        &self.face_map
    }

    pub fn is_covered(&self, idx: usize) -> bool {
        self.face_map[idx] >= 0
    }

    /// Position in the mesh list of the mesh covering pixel `idx`.
    pub fn owner_at(&self, idx: usize) -> Option<usize> {
        let f = self.face_map[idx];
        (f >= 0).then(|| self.owner[f as usize])
    }

    /// Evaluate depth and normals at the frozen pixels for the current vertex
    /// positions. With the positions the coverage was captured from this
    /// reproduces the rasterizer output exactly.
    pub fn shade(&self, meshes: &[&Mesh], camera: &Camera) -> ShadedPixels {
        let prep = Prepared::new(meshes, camera);
        let n = self.width * self.height;
        let mut depth = vec![DEPTH_BACKGROUND; n];
        let mut normal = vec![Vec3::zeros(); n];
        for idx in 0..n {
            let fi = self.face_map[idx];
            if fi < 0 {
                continue;
            }
            let Some(f) = prep.faces[fi as usize].as_ref() else {
                continue;
            };
            let p = pixel_center(idx % self.width, idx / self.width);
            let sh = shade(&prep.tri_screen(f), prep.perspective, &p);
            depth[idx] = sh.depth;
            normal[idx] = shade_normal(
                &sh.mu,
                &prep.tri_normals(f),
                self.flips[fi as usize],
                &f.geometric,
            );
        }
        ShadedPixels { depth, normal }
    }

    /// Pull per-pixel gradients of a loss with respect to depth and normal back
    /// to world-space vertex positions. Returns one gradient list per mesh.
    pub fn backward(
        &self,
        meshes: &[&Mesh],
        camera: &Camera,
        grad_depth: Option<&[f64]>,
        grad_normal: Option<&[Vec3]>,
    ) -> Vec<Vec<Vec3>> {
        let prep = Prepared::new(meshes, camera);
        let nv = prep.screen.len();
        let mut g_screen = vec![Vec3::zeros(); nv];
        let mut g_cam_normal = vec![Vec3::zeros(); nv];
        let mut any_normal = false;

        for idx in 0..self.width * self.height {
            let fi = self.face_map[idx];
            if fi < 0 {
                continue;
            }
            let gd = grad_depth.map_or(0.0, |g| g[idx]);
            let gn = grad_normal.map_or(Vec3::zeros(), |g| g[idx]);
            if gd == 0.0 && gn == Vec3::zeros() {
                continue;
            }
            let Some(f) = prep.faces[fi as usize].as_ref() else {
                continue;
            };
            let s = prep.tri_screen(f);
            let nrm = prep.tri_normals(f);
            let p = pixel_center(idx % self.width, idx / self.width);
            let flip = self.flips[fi as usize];
            let (gs, gnv) = pixel_backward(&s, &nrm, flip, prep.perspective, &p, gd, &gn);
            for k in 0..3 {
                g_screen[f.verts[k]] += gs[k];
                if gnv[k] != Vec3::zeros() {
                    g_cam_normal[f.verts[k]] += gnv[k];
                    any_normal = true;
                }
            }
        }

        let rt = camera.rotation.transpose();
        meshes
            .iter()
            .enumerate()
            .map(|(k, mesh)| {
                let off = prep.offsets[k];
                let verts = mesh.vertices();
                let mut grad: Vec<Vec3> = verts
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let pc = camera.to_camera(v);
                        let j = camera.project_jacobian(&pc);
                        rt * (j.transpose() * g_screen[off + i])
                    })
                    .collect();
                if any_normal {
                    let g_world: Vec<Vec3> = (0..verts.len())
                        .map(|i| rt * g_cam_normal[off + i])
                        .collect();
                    normal_backward(verts, mesh.faces(), &g_world, &mut grad);
                }
                grad
            })
            .collect()
    }
}

#[inline]
fn edge_grad(a: &Vec2, b: &Vec2, p: &Vec2) -> (Vec2, Vec2, Vec2) {
    (
        Vec2::new(b.y - p.y, p.x - b.x),
        Vec2::new(p.y - a.y, a.x - p.x),
        Vec2::new(a.y - b.y, b.x - a.x),
    )
}

/// Gradient of one pixel's (depth, normal) with respect to the three screen
/// vertices (u, v, z) and camera-space vertex normals.
fn pixel_backward(
    s: &[Vec3; 3],
    normals: &[Vec3; 3],
    flip: f64,
    perspective: bool,
    p: &Vec2,
    gd: f64,
    gn: &Vec3,
) -> ([Vec3; 3], [Vec3; 3]) {
    let sh = shade(s, perspective, p);
    let mut g_mu = [0.0; 3];
    let mut g_nrm = [Vec3::zeros(); 3];

    let raw = normals[0] * sh.mu[0] + normals[1] * sh.mu[1] + normals[2] * sh.mu[2];
    let len = raw.norm();
    if len >= 1e-12 && *gn != Vec3::zeros() {
        let r = raw / len;
        let g_raw = (gn - r * r.dot(gn)) * (flip / len);
        for k in 0..3 {
            g_mu[k] = g_raw.dot(&normals[k]);
            g_nrm[k] = g_raw * sh.mu[k];
        }
    }

    let mut g_lambda = [0.0; 3];
    let mut g_z = [0.0; 3];
    if perspective {
        let q: [f64; 3] = [
            sh.lambda[0] / s[0].z,
            sh.lambda[1] / s[1].z,
            sh.lambda[2] / s[2].z,
        ];
        let qs = q[0] + q[1] + q[2];
        let mean = g_mu[0] * sh.mu[0] + g_mu[1] * sh.mu[1] + g_mu[2] * sh.mu[2];
        for k in 0..3 {
            let gq = (g_mu[k] - mean) / qs - gd * sh.depth * sh.depth;
            g_lambda[k] = gq / s[k].z;
            g_z[k] = -gq * sh.lambda[k] / (s[k].z * s[k].z);
        }
    } else {
        for k in 0..3 {
            g_lambda[k] = g_mu[k] + gd * s[k].z;
            g_z[k] = gd * sh.lambda[k];
        }
    }

    let a = [s[0].xy(), s[1].xy(), s[2].xy()];
    let area = edge(&a[0], &a[1], &a[2]);
    let mut g_xy = [Vec2::zeros(); 3];
    let mut g_area = 0.0;
    for k in 0..3 {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        let e = sh.lambda[k] * area;
        let ge = g_lambda[k] / area;
        g_area -= g_lambda[k] * e / (area * area);
        let (ga, gb, _) = edge_grad(&a[i], &a[j], p);
        g_xy[i] += ga * ge;
        g_xy[j] += gb * ge;
    }
    let (g0, g1, g2) = edge_grad(&a[0], &a[1], &a[2]);
    g_xy[0] += g0 * g_area;
    g_xy[1] += g1 * g_area;
    g_xy[2] += g2 * g_area;

    (
        [
            Vec3::new(g_xy[0].x, g_xy[0].y, g_z[0]),
            Vec3::new(g_xy[1].x, g_xy[1].y, g_z[1]),
            Vec3::new(g_xy[2].x, g_xy[2].y, g_z[2]),
        ],
        g_nrm,
    )
}

/// Accumulate into `grad` the gradient through the area-weighted unit vertex
/// normals, given gradients `g_normal` with respect to those normals.
pub(crate) fn normal_backward(
    vertices: &[Vec3],
    faces: &[[u32; 3]],
    g_normal: &[Vec3],
    grad: &mut [Vec3],
) {
    let sums = vertex_normal_sums(vertices, faces);
    let g_sum: Vec<Vec3> = sums
        .iter()
        .zip(g_normal)
        .map(|(s, g)| {
            let n = s.norm();
            if 0.5 * n < DEGENERATE_AREA || *g == Vec3::zeros() {
                Vec3::zeros()
            } else {
                let u = s / n;
                (g - u * u.dot(g)) / n
            }
        })
        .collect();
    for f in faces {
        let [i0, i1, i2] = f.map(|i| i as usize);
        let gc = g_sum[i0] + g_sum[i1] + g_sum[i2];
        if gc == Vec3::zeros() {
            continue;
        }
        let e1 = vertices[i1] - vertices[i0];
        let e2 = vertices[i2] - vertices[i0];
        let ge1 = e2.cross(&gc);
        let ge2 = gc.cross(&e1);
        grad[i1] += ge1;
        grad[i2] += ge2;
        grad[i0] -= ge1 + ge2;
    }
}
