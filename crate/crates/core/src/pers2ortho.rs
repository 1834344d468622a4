//! Perspective input view to partial canonical orthographic views.
//!
//! A depth map rendered from the partial mesh lifts the input RGB to a coloured
//! point cloud; edge filtering drops pixels near depth discontinuities, and
//! each canonical view keeps only points that agree with the mesh depth seen
//! from that view before splatting them.

use std::collections::BTreeMap;

use log::{debug, warn};

use crate::camera::Camera;
use crate::canonical::{normalize_scene, CanonicalRig, Normalization};
use crate::diffrender::Coverage;
use crate::error::{GeomError, Result};
use crate::image::{ImageBuffer, Semantic};
use crate::imgproc;
use crate::math::Vec3;
use crate::mesh::{Mesh, Scene};
use crate::optim::Adam;
use crate::pointcloud::ColoredPointCloud;
use crate::render::{rasterize, RasterOptions};

/// Canonical views that receive partial RGB (azimuths 0°, 45°, 315°).
pub const PARTIAL_VIEWS: [usize; 3] = [0, 1, 5];
pub const DEFAULT_TAU: f64 = 0.02;
pub const DEFAULT_ERODE: usize = 3;
pub const DEFAULT_EDGE_DILATE: usize = 5;
pub const DEFAULT_GEO_ITERS: usize = 200;
pub const DEFAULT_GEO_LR: f64 = 0.02;

const STD_EPS: f64 = 1e-12;
/// Geometry refinement stops once no vertex gradient is longer than this.
pub const GEO_GRAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartialViewSet {
    pub partial_rgb: BTreeMap<usize, ImageBuffer>,
    pub visibility: BTreeMap<usize, ImageBuffer>,
    pub smplx_normals: BTreeMap<usize, ImageBuffer>,
}

fn check_size(a: &ImageBuffer, b: &ImageBuffer, what: &str) -> Result<()> {
    if !a.same_size(b) {
        return Err(GeomError::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// One world-space point per valid pixel with positive depth, unprojected
/// through the pixel centre.
pub fn depth_to_pointcloud(
    depth: &ImageBuffer,
    rgb: &ImageBuffer,
    camera: &Camera,
    valid_mask: &ImageBuffer,
) -> Result<ColoredPointCloud> {
    check_size(depth, rgb, "depth vs rgb")?;
    check_size(depth, valid_mask, "depth vs mask")?;
    if rgb.channels() != 3 {
        return Err(GeomError::InvalidImage("colour buffer needs 3 channels".into()));
    }
    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut pixels = Vec::new();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let d = depth.get(x, y);
            if !valid_mask.is_set(x, y) || !(d > 0.0) {
                continue;
            }
            points.push(camera.unproject(x as f64 + 0.5, y as f64 + 0.5, d));
            colors.push(rgb.get3(x, y));
            pixels.push((x, y));
        }
    }
    ColoredPointCloud::new(points, colors)?.with_source_pixels(pixels)
}

/// Foreground eroded by `erode_kernel`, minus Canny depth edges dilated by
/// `dilate_kernel`.
pub fn depth_edge_filter(
    depth: &ImageBuffer,
    fg_mask: &ImageBuffer,
    erode_kernel: usize,
    dilate_kernel: usize,
) -> Result<ImageBuffer> {
    check_size(depth, fg_mask, "depth vs mask")?;
    let eroded = imgproc::erode(fg_mask, erode_kernel)?;
    let edges = imgproc::depth_edges(depth, &eroded)?;
    let band = imgproc::dilate(&edges, dilate_kernel)?;
    Ok(eroded.mask_and_not(&band))
}

/// Keep points whose projection is inside the image, lands on positive mesh
/// depth, and agrees with it to within `tau` (strict).
pub fn visible_point_select(
    pcd: &ColoredPointCloud,
    mesh_depth: &ImageBuffer,
    camera: &Camera,
    tau: f64,
) -> ColoredPointCloud {
    let keep: Vec<bool> = pcd
        .points()
        .iter()
        .map(|p| {
            let q = camera.project(p);
            match camera.pixel_of(q.x, q.y) {
                Some((x, y)) if x < mesh_depth.width() && y < mesh_depth.height() => {
                    let zm = mesh_depth.get(x, y);
                    zm > 0.0 && (zm - q.z).abs() < tau
                }
                _ => false,
            }
        })
        .collect();
    pcd.filter(&keep)
}

/// Splat points into `target` with one-pixel footprints; the nearest point
/// wins each pixel (ties to the earlier point). Unhit pixels are white.
pub fn reproject_pcd(pcd: &ColoredPointCloud, target: &Camera) -> (ImageBuffer, ImageBuffer) {
    let (w, h) = (target.width, target.height);
    let mut best = vec![f64::INFINITY; w * h];
    let mut winner = vec![usize::MAX; w * h];
    for (i, p) in pcd.points().iter().enumerate() {
        let q = target.project(p);
        if !(q.z > 0.0) {
            continue;
        }
        if let Some((x, y)) = target.pixel_of(q.x, q.y) {
            let idx = y * w + x;
            if q.z < best[idx] {
                best[idx] = q.z;
                winner[idx] = i;
            }
        }
    }
    let mut rgb = ImageBuffer::new(w, h, Semantic::Rgb, 1.0);
    let mut mask = ImageBuffer::mask(w, h);
    for idx in 0..w * h {
        if winner[idx] != usize::MAX {
            let (x, y) = (idx % w, idx / w);
            rgb.set3(x, y, pcd.colors()[winner[idx]]);
            mask.set(x, y, 1.0);
        }
    }
    (rgb, mask)
}

/// Per-iteration record of the geometry refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRefineResult {
    pub meshes: Vec<Mesh>,
    /// Loss before each update (index 0 is the initial loss).
    pub trace: Vec<f64>,
    pub best_iteration: usize,
    /// Iteration at which every vertex gradient fell below [`GEO_GRAD_TOL`];
    /// later trace entries repeat the converged loss.
    pub converged_at: Option<usize>,
    /// Largest distance any vertex reached from its input over all iterates.
    pub max_displacement: f64,
}

/// Value and vertex gradients of the affine-invariant depth plus cosine
/// normal loss, averaged over pixels covered in `coverage` where the target
/// normal is set.
pub fn geometry_loss(
    meshes: &[&Mesh],
    target_depth: &ImageBuffer,
    target_normal: &ImageBuffer,
    camera: &Camera,
    coverage: &Coverage,
) -> Result<(f64, Vec<Vec<Vec3>>)> {
    let n = camera.width * camera.height;
    let shaded = coverage.shade(meshes, camera);
    let shared: Vec<usize> = (0..n)
        .filter(|&i| shaded.depth[i] > 0.0 && target_normal.at3(i) != Vec3::zeros())
        .collect();
    if shared.is_empty() {
        return Err(GeomError::Empty(
            "rendered mesh and targets share no foreground pixel".into(),
        ));
    }
    let cnt = shared.len() as f64;
    let standardize = |vals: &[f64]| {
        let m = vals.iter().sum::<f64>() / cnt;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / cnt;
        let s = (var + STD_EPS).sqrt();
        (vals.iter().map(|v| (v - m) / s).collect::<Vec<_>>(), s)
    };
    let d: Vec<f64> = shared.iter().map(|&i| shaded.depth[i]).collect();
    let t: Vec<f64> = shared.iter().map(|&i| target_depth.at(i)).collect();
    let (dn, sd) = standardize(&d);
    let (tn, _) = standardize(&t);

    let mut loss = 0.0;
    let mut g_dn = vec![0.0; shared.len()];
    let mut g_normal = vec![Vec3::zeros(); n];
    for (k, &i) in shared.iter().enumerate() {
        let r = dn[k] - tn[k];
        let nt = target_normal.at3(i);
        loss += r * r + 1.0 - nt.dot(&shaded.normal[i]);
        g_dn[k] = 2.0 * r / cnt;
        g_normal[i] = -nt / cnt;
    }
    loss /= cnt;

    let mean_g = g_dn.iter().sum::<f64>() / cnt;
    let mean_gd = g_dn.iter().zip(&dn).map(|(g, v)| g * v).sum::<f64>() / cnt;
    let mut g_depth = vec![0.0; n];
    for (k, &i) in shared.iter().enumerate() {
        g_depth[i] = (g_dn[k] - mean_g - dn[k] * mean_gd) / sd;
    }
    let grads = coverage.backward(meshes, camera, Some(&g_depth), Some(&g_normal));
    Ok((loss, grads))
}

fn check_finite(meshes: &[Mesh], term: &str) -> Result<()> {
    for m in meshes {
        if let Some(i) = m.vertices().iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeomError::NonFinite {
                term: term.into(),
                detail: format!("vertex {i} of instance {}", m.instance_id()),
            });
        }
    }
    Ok(())
}

/// Adam on all vertices of `meshes` against depth/normal predictions seen from
/// `camera`. Returns the best iterate (never worse than the input).
pub fn refine_geometry(
    meshes: Vec<Mesh>,
    target_depth: &ImageBuffer,
    target_normal: &ImageBuffer,
    camera: &Camera,
    iters: usize,
    lr: f64,
) -> Result<GeoRefineResult> {
    camera.validate()?;
    if target_depth.width() != camera.width || target_depth.height() != camera.height {
        return Err(GeomError::ShapeMismatch("target depth does not match camera".into()));
    }
    check_size(target_depth, target_normal, "target depth vs normal")?;
    if target_normal.channels() != 3 {
        return Err(GeomError::InvalidImage("target normal needs 3 channels".into()));
    }
    if meshes.iter().any(|m| m.vertices().len() < 4) {
        return Err(GeomError::InvalidMesh("refinement needs at least 4 vertices".into()));
    }
    let counts: Vec<usize> = meshes.iter().map(|m| m.vertices().len()).collect();
    let mut params: Vec<Vec3> = meshes.iter().flat_map(|m| m.vertices().to_vec()).collect();
    let start = params.clone();
    let mut opt = Adam::with_uniform_lr(params.len(), lr);
    let mut current = meshes;
    let mut best = (f64::INFINITY, current.clone(), 0);
    let mut trace = Vec::with_capacity(iters + 1);
    let mut converged_at = None;
    let mut max_displacement: f64 = 0.0;

    for it in 0..=iters {
        let refs: Vec<&Mesh> = current.iter().collect();
        let cov = Coverage::capture(&refs, camera);
        let (loss, grads) = geometry_loss(&refs, target_depth, target_normal, camera, &cov)?;
        if !loss.is_finite() {
            return Err(GeomError::NonFinite {
                term: "L_geo".into(),
                detail: format!("iteration {it}"),
            });
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, current.clone(), it);
        }
        if it == iters {
            break;
        }
        let flat: Vec<Vec3> = grads.into_iter().flatten().collect();
        if flat.iter().all(|g| g.norm() <= GEO_GRAD_TOL) {
            trace.resize(iters + 1, loss);
            converged_at = Some(it);
            break;
        }
        opt.step(&mut params, &flat);
        max_displacement = params
            .iter()
            .zip(&start)
            .map(|(p, q)| (p - q).norm())
            .fold(max_displacement, f64::max);
        let mut off = 0;
        current = current
            .into_iter()
            .zip(&counts)
            .map(|(m, &c)| {
                let v = params[off..off + c].to_vec();
                off += c;
                m.with_vertices(v)
            })
            .collect::<Result<_>>()
            .map_err(|e| GeomError::NonFinite {
                term: "L_geo".into(),
                detail: e.to_string(),
            })?;
        check_finite(&current, "L_geo")?;
    }
    debug!(
        "geometry refinement: loss {:.6} -> {:.6} (best at {})",
        trace[0], best.0, best.2
    );
    Ok(GeoRefineResult {
        meshes: best.1,
        trace,
        best_iteration: best.2,
        converged_at,
        max_displacement,
    })
}

/// Single-mesh form of [`refine_geometry`].
pub fn refine_partial_geometry(
    mesh: Mesh,
    target_depth: &ImageBuffer,
    target_normal: &ImageBuffer,
    camera: &Camera,
    iters: usize,
    lr: f64,
) -> Result<(Mesh, Vec<f64>)> {
    let r = refine_geometry(vec![mesh], target_depth, target_normal, camera, iters, lr)?;
    Ok((r.meshes.into_iter().next().unwrap(), r.trace))
}

#[derive(Debug, Clone)]
pub struct Pers2OrthoParams {
    pub padding: f64,
    /// Depth agreement threshold in world units (meters).
    pub tau: f64,
    pub erode_kernel: usize,
    pub dilate_kernel: usize,
}

impl Default for Pers2OrthoParams {
    fn default() -> Self {
        Self {
            padding: crate::canonical::DEFAULT_PADDING,
            tau: DEFAULT_TAU,
            erode_kernel: DEFAULT_ERODE,
            dilate_kernel: DEFAULT_EDGE_DILATE,
        }
    }
}

/// Build partial views from the input image.
///
/// `initial` is the body-model scene (normals for all six views and the
/// canonical normalization come from it); `partial` is the refined partial
/// mesh used for depth (pass `initial` again when no refinement was run).
/// `rig` must be built for the canonical cube; its normalization is replaced
/// by the one fitted here and returned with the views.
pub fn pers2ortho(
    rgb: &ImageBuffer,
    input_camera: &Camera,
    initial: &Scene,
    partial: &Scene,
    rig: &CanonicalRig,
    params: &Pers2OrthoParams,
) -> Result<(PartialViewSet, CanonicalRig)> {
    rig.validate()?;
    input_camera.validate()?;
    if rgb.width() != input_camera.width || rgb.height() != input_camera.height {
        return Err(GeomError::ShapeMismatch("input image does not match camera".into()));
    }
    let (initial_n, norm) = normalize_scene(initial.clone(), params.padding)?;
    let rig = rig.clone().with_normalization(norm);
    let partial_n = norm.apply_scene(partial.clone())?;

    let input = rasterize(partial, input_camera, &RasterOptions::default())?;
    let fg = input.foreground();
    let valid = depth_edge_filter(&input.depth, &fg, params.erode_kernel, params.dilate_kernel)?;
    let pcd = depth_to_pointcloud(&input.depth, rgb, input_camera, &valid)?
        .map_points(|p| norm.apply(p));
    debug!("point cloud: {} of {} foreground pixels", pcd.len(), fg.count_set());
    if pcd.is_empty() {
        warn!("no valid input pixels survive edge filtering");
    }
    let tau = params.tau / (norm.scale / 2.0);

    let mut out = PartialViewSet::default();
    for &vi in &PARTIAL_VIEWS {
        let cam = rig.camera(vi).unwrap();
        let mesh_depth = rasterize(&partial_n, cam, &RasterOptions::default())?.depth;
        let vis = visible_point_select(&pcd, &mesh_depth, cam, tau);
        let (img, mask) = reproject_pcd(&vis, cam);
        out.partial_rgb.insert(vi, img);
        out.visibility.insert(vi, mask);
    }
    for (vi, cam) in rig.cameras().enumerate() {
        out.smplx_normals
            .insert(vi, rasterize(&initial_n, cam, &RasterOptions::default())?.normal);
    }
    Ok((out, rig))
}

/// Normalization shared by the canonical rig (convenience for callers that
/// only need the transform).
pub fn canonical_normalization(initial: &Scene, padding: f64) -> Result<Normalization> {
    Normalization::fit(initial, padding)
}
