//! Per-pixel interpolation shared by the rasterizer and the frozen-coverage
//! gradient path, so rendered targets and optimised renders agree bit for bit.

use crate::math::{Vec2, Vec3};

/// Near limit on camera depth; triangles with a vertex closer than this are culled.
pub const NEAR: f64 = 1e-6;

/// Pixel centre of pixel index `(x, y)`.
#[inline]
pub fn pixel_center(x: usize, y: usize) -> Vec2 {
    Vec2::new(x as f64 + 0.5, y as f64 + 0.5)
}

#[inline]
pub(crate) fn edge(a: &Vec2, b: &Vec2, p: &Vec2) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Edge function evaluated with the endpoints in canonical (vertex id) order,
/// so two faces sharing an edge get exactly opposite values.
#[inline]
pub(crate) fn edge_canonical(a: &Vec2, ia: usize, b: &Vec2, ib: usize, p: &Vec2) -> f64 {
    if ia < ib {
        edge(a, b, p)
    } else {
        -edge(b, a, p)
    }
}

#[inline]
fn is_top_left(a: &Vec2, b: &Vec2) -> bool {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Coverage test at `p` with the top-left fill rule. `s` are screen positions,
/// `ids` scene-global vertex ids, `orient` the sign of the signed area.
#[inline]
pub(crate) fn covers(s: &[Vec2; 3], ids: &[usize; 3], orient: f64, p: &Vec2) -> bool {
    for k in 0..3 {
        let (a, b) = ((k + 1) % 3, (k + 2) % 3);
        let w = orient * edge_canonical(&s[a], ids[a], &s[b], ids[b], p);
        if w < 0.0 {
            return false;
        }
        if w == 0.0 {
            let tl = if orient > 0.0 {
                is_top_left(&s[a], &s[b])
            } else {
                is_top_left(&s[b], &s[a])
            };
            if !tl {
                return false;
            }
        }
    }
    true
}

/// Interpolation weights and depth at a pixel.
#[derive(Debug, Clone, Copy)]
pub struct Shade {
    /// Screen-space barycentrics.
    pub lambda: [f64; 3],
    /// Attribute weights (perspective-correct for pinhole cameras).
    pub mu: [f64; 3],
    pub depth: f64,
}

/// `s[i] = (u, v, depth)` of the three face vertices.
#[inline]
pub fn shade(s: &[Vec3; 3], perspective: bool, p: &Vec2) -> Shade {
    let a = [s[0].xy(), s[1].xy(), s[2].xy()];
    let area = edge(&a[0], &a[1], &a[2]);
    let e = [edge(&a[1], &a[2], p), edge(&a[2], &a[0], p), edge(&a[0], &a[1], p)];
    let lambda = [e[0] / area, e[1] / area, e[2] / area];
    if perspective {
        let q = [lambda[0] / s[0].z, lambda[1] / s[1].z, lambda[2] / s[2].z];
        let qs = q[0] + q[1] + q[2];
        Shade {
            lambda,
            mu: [q[0] / qs, q[1] / qs, q[2] / qs],
            depth: 1.0 / qs,
        }
    } else {
        Shade {
            lambda,
            mu: lambda,
            depth: lambda[0] * s[0].z + lambda[1] * s[1].z + lambda[2] * s[2].z,
        }
    }
}

/// Interpolated, renormalised normal; `flip` is ±1. Falls back to `geometric`
/// when the interpolated normal vanishes.
#[inline]
pub fn shade_normal(mu: &[f64; 3], normals: &[Vec3; 3], flip: f64, geometric: &Vec3) -> Vec3 {
    let raw = normals[0] * mu[0] + normals[1] * mu[1] + normals[2] * mu[2];
    let n = raw.norm();
    if n < 1e-12 {
        *geometric
    } else {
        raw * (flip / n)
    }
}

/// Whether the face (camera-space corners) faces the camera, and its unit
/// geometric normal oriented towards the camera.
pub(crate) fn facing(c: &[Vec3; 3], orthographic: bool) -> (bool, Vec3) {
    let n = (c[1] - c[0]).cross(&(c[2] - c[0]));
    let to_cam = if orthographic {
        Vec3::new(0.0, 0.0, -1.0)
    } else {
        -(c[0] + c[1] + c[2]) / 3.0
    };
    let front = n.dot(&to_cam) >= 0.0;
    let len = n.norm();
    let g = if len > 0.0 {
        if front {
            n / len
        } else {
            -n / len
        }
    } else {
        Vec3::zeros()
    };
    (front, g)
}
