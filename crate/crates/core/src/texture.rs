//! Per-vertex colour fusion from several calibrated RGB views.

use std::collections::VecDeque;

use log::warn;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{GeomError, Result};
use crate::image::ImageBuffer;
use crate::imgproc::{depth_edges, dilate};
use crate::math::Vec3;
use crate::mesh::{compute_vertex_normals, Mesh};

pub const DEFAULT_CONFIDENCE_DILATE: usize = 21;
pub const FALLBACK_GRAY: f64 = 0.5;

/// One source view: its camera, colour image and depth (background −1).
#[derive(Debug, Clone)]
pub struct TextureView {
    pub camera: Camera,
    pub rgb: ImageBuffer,
    pub depth: ImageBuffer,
}

#[derive(Debug, Clone)]
pub struct ViewContribution {
    pub view_index: usize,
    pub confidence_mask: ImageBuffer,
    /// Zero for vertices the view does not see or whose projection falls
    /// outside the confidence mask.
    pub per_vertex_weight: Vec<f64>,
    /// Bilinear colour at each vertex projection (meaningful where the weight
    /// is positive).
    pub samples: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct Fusion {
    pub mesh: Mesh,
    pub contributions: Vec<ViewContribution>,
    /// Vertices coloured by hole filling instead of blending.
    pub filled: usize,
}

/// Foreground pixels away from depth discontinuities: `fg` minus the Canny
/// depth edges dilated by `dilate_kernel`.
pub fn edge_confidence_mask(depth: &ImageBuffer, fg: &ImageBuffer, dilate_kernel: usize) -> Result<ImageBuffer> {
    let edges = depth_edges(depth, fg)?;
    Ok(fg.mask_and_not(&dilate(&edges, dilate_kernel)?))
}

/// Bilinear sample at continuous image position (u, v) using only foreground
/// neighbours, so silhouette pixels do not pull in background colour.
fn sample_foreground(rgb: &ImageBuffer, depth: &ImageBuffer, u: f64, v: f64) -> Option<[f64; 3]> {
    let (w, h) = (rgb.width() as i64, rgb.height() as i64);
    let (x, y) = (u - 0.5, v - 0.5);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut acc = Vec3::zeros();
    let mut total = 0.0;
    for (dx, dy, wt) in [
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let (px, py) = (x0 as i64 + dx, y0 as i64 + dy);
        if px < 0 || py < 0 || px >= w || py >= h || wt <= 0.0 {
            continue;
        }
        let (px, py) = (px as usize, py as usize);
        if depth.get(px, py) <= 0.0 {
            continue;
        }
        acc += rgb.get3(px, py) * wt;
        total += wt;
    }
    (total > 0.0).then(|| {
        let c = acc / total;
        [c.x, c.y, c.z]
    })
}

fn contribution(
    index: usize,
    view: &TextureView,
    mesh: &Mesh,
    normals: &[Vec3],
    visible: &[bool],
    dilate_kernel: usize,
) -> Result<ViewContribution> {
    let cam = &view.camera;
    if view.rgb.width() != cam.width || view.rgb.height() != cam.height || !view.rgb.same_size(&view.depth) {
        return Err(GeomError::ShapeMismatch(format!("view {index}: image size differs from camera")));
    }
    if view.rgb.channels() != 3 || view.depth.channels() != 1 {
        return Err(GeomError::InvalidImage(format!("view {index}: expected rgb and depth buffers")));
    }
    let fg = view.depth.depth_foreground();
    let confidence = edge_confidence_mask(&view.depth, &fg, dilate_kernel)?;
    let n = mesh.vertices().len();
    let mut weight = vec![0.0; n];
    let mut samples = vec![[0.0; 3]; n];
    for (i, p) in mesh.vertices().iter().enumerate() {
        if !visible[i] {
            continue;
        }
        let cos = normals[i].dot(&cam.direction_to_camera(p));
        if cos <= 0.0 {
            continue;
        }
        let q = cam.project(p);
        let Some((px, py)) = cam.pixel_of(q.x, q.y) else {
            continue;
        };
        if !confidence.is_set(px, py) {
            continue;
        }
        if let Some(c) = sample_foreground(&view.rgb, &view.depth, q.x, q.y) {
            weight[i] = cos;
            samples[i] = c;
        }
    }
    Ok(ViewContribution {
        view_index: index,
        confidence_mask: confidence,
        per_vertex_weight: weight,
        samples,
    })
}

/// Multi-source breadth-first fill over mesh edges: every uncoloured vertex
/// takes the colour of the nearest (in hops) coloured vertex.
fn fill_holes(mesh: &Mesh, colors: &mut [Option<[f64; 3]>]) {
    let adj = mesh.vertex_adjacency();
    let mut queue: VecDeque<usize> = (0..colors.len()).filter(|&i| colors[i].is_some()).collect();
    while let Some(i) = queue.pop_front() {
        let c = colors[i];
        for &j in &adj[i] {
            let j = j as usize;
            if colors[j].is_none() {
                colors[j] = c;
                queue.push_back(j);
            }
        }
    }
}

/// Fuse `views` into vertex colours with the default confidence dilation.
/// `visibility[k][i]` says whether vertex `i` is unoccluded in view `k`.
pub fn fuse_texture(mesh: &Mesh, views: &[TextureView], visibility: &[Vec<bool>]) -> Result<Fusion> {
    fuse_texture_with(mesh, views, visibility, DEFAULT_CONFIDENCE_DILATE)
}

pub fn fuse_texture_with(
    mesh: &Mesh,
    views: &[TextureView],
    visibility: &[Vec<bool>],
    dilate_kernel: usize,
) -> Result<Fusion> {
    if views.is_empty() {
        return Err(GeomError::InvalidParameter("texture fusion needs at least one view".into()));
    }
    if visibility.len() != views.len() || visibility.iter().any(|v| v.len() != mesh.vertices().len()) {
        return Err(GeomError::ShapeMismatch("visibility must hold one flag per vertex per view".into()));
    }
    let normals = compute_vertex_normals(mesh).normals;
    let contributions = views
        .par_iter()
        .zip(visibility.par_iter())
        .enumerate()
        .map(|(k, (view, vis))| contribution(k, view, mesh, &normals, vis, dilate_kernel))
        .collect::<Result<Vec<_>>>()?;

    let n = mesh.vertices().len();
    let mut colors: Vec<Option<[f64; 3]>> = (0..n)
        .map(|i| {
            let mut acc = [0.0; 3];
            let mut total = 0.0;
            for c in &contributions {
                let w = c.per_vertex_weight[i];
                if w > 0.0 {
                    for ch in 0..3 {
                        acc[ch] += w * c.samples[i][ch];
                    }
                    total += w;
                }
            }
            (total > 0.0).then(|| acc.map(|a| (a / total).clamp(0.0, 1.0)))
        })
        .collect();
    let seen = colors.iter().filter(|c| c.is_some()).count();
    if seen == 0 {
        warn!("no vertex is seen by any view; using uniform gray");
    }
    fill_holes(mesh, &mut colors);
    let unreached = colors.iter().filter(|c| c.is_none()).count();
    if seen > 0 && unreached > 0 {
        warn!("{unreached} vertices have no coloured neighbour; using gray");
    }
    let colors = colors.into_iter().map(|c| c.unwrap_or([FALLBACK_GRAY; 3])).collect();
    Ok(Fusion {
        mesh: mesh.clone().with_colors(colors)?,
        contributions,
        filled: n - seen,
    })
}
