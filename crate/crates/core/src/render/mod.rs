//! Deterministic z-buffer software rasterizer.
//!
//! Conventions: pixel `(x, y)` samples `(x + 0.5, y + 0.5)`; shared edges use a
//! top-left fill rule; back faces are rasterized and their normals flipped to
//! face the camera; coverage is binary. Depth ties go to the smaller
//! scene-global face index, so the result does not depend on tiling or thread
//! count.

mod shade;
mod visibility;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{GeomError, Result};
use crate::image::{ImageBuffer, Semantic, DEPTH_BACKGROUND};
use crate::math::Vec3;
use crate::mesh::{compute_vertex_normals, Mesh, Scene};

pub use shade::{pixel_center, shade, shade_normal, Shade, NEAR};
pub(crate) use shade::{covers, edge, facing};
pub use visibility::{vertex_visibility, vertex_visibility_from_depth};

const BAND_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterOptions {
    pub render_rgb: bool,
    pub render_parts: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Binary masks keyed by (instance id, part label).
pub type PartMasks = BTreeMap<(u32, u32), ImageBuffer>;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub depth: ImageBuffer,
    /// Camera-space unit normals, zero at background.
    pub normal: ImageBuffer,
    pub rgb: Option<ImageBuffer>,
    /// Instance id per pixel, 0 at background.
    pub instance_map: ImageBuffer,
    pub part_masks: Option<PartMasks>,
    /// Scene-global face index per pixel, -1 at background.
    pub face_index_map: Vec<i32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    pub fn foreground(&self) -> ImageBuffer {
        self.depth.depth_foreground()
    }

    /// Silhouette of one instance as seen in this render.
    pub fn instance_mask(&self, instance_id: u32) -> ImageBuffer {
        let im = &self.instance_map;
        ImageBuffer::mask_from_fn(im.width(), im.height(), |x, y| {
            im.get(x, y) == instance_id as f64
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedFace {
    pub verts: [usize; 3],
    pub instance_id: u32,
    pub part: Option<u32>,
    pub orient: f64,
    pub front: bool,
    pub geometric: Vec3,
}

/// Scene projected into one camera.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub screen: Vec<Vec3>,
    pub cam_normals: Vec<Vec3>,
    pub colors: Vec<Option<Vec3>>,
    /// `None` for culled or zero-area faces.
    pub faces: Vec<Option<PreparedFace>>,
    /// First scene-global vertex index of each mesh.
    pub offsets: Vec<usize>,
    pub perspective: bool,
}

impl Prepared {
    pub fn new(meshes: &[&Mesh], camera: &Camera) -> Self {
        let perspective = !camera.is_orthographic();
        let mut screen = Vec::new();
        let mut camera_pts = Vec::new();
        let mut cam_normals = Vec::new();
        let mut colors = Vec::new();
        let mut faces = Vec::new();
        let mut offsets = Vec::with_capacity(meshes.len());
        for mesh in meshes.iter() {
            let offset = screen.len();
            offsets.push(offset);
            let normals = compute_vertex_normals(mesh).normals;
            for (i, v) in mesh.vertices().iter().enumerate() {
                let pc = camera.to_camera(v);
                camera_pts.push(pc);
                screen.push(camera.project_camera(&pc));
                cam_normals.push(camera.rotation * normals[i]);
                colors.push(mesh.vertex_colors().map(|c| Vec3::from(c[i])));
            }
            for (fi, f) in mesh.faces().iter().enumerate() {
                let verts = [
                    offset + f[0] as usize,
                    offset + f[1] as usize,
                    offset + f[2] as usize,
                ];
                let c = [camera_pts[verts[0]], camera_pts[verts[1]], camera_pts[verts[2]]];
                if c.iter().any(|p| !(p.z > NEAR)) {
                    faces.push(None);
                    continue;
                }
                let s = [screen[verts[0]].xy(), screen[verts[1]].xy(), screen[verts[2]].xy()];
                let area = shade::edge_canonical(&s[0], verts[0], &s[1], verts[1], &s[2]);
                if !(area.abs() > 1e-12) {
                    faces.push(None);
                    continue;
                }
                let (front, geometric) = facing(&c, !perspective);
                faces.push(Some(PreparedFace {
                    verts,
                    instance_id: mesh.instance_id(),
                    part: mesh.face_part(fi),
                    orient: area.signum(),
                    front,
                    geometric,
                }));
            }
        }
        Self {
            screen,
            cam_normals,
            colors,
            faces,
            offsets,
            perspective,
        }
    }

    pub fn tri_screen(&self, f: &PreparedFace) -> [Vec3; 3] {
        [
            self.screen[f.verts[0]],
            self.screen[f.verts[1]],
            self.screen[f.verts[2]],
        ]
    }

    pub fn tri_normals(&self, f: &PreparedFace) -> [Vec3; 3] {
        [
            self.cam_normals[f.verts[0]],
            self.cam_normals[f.verts[1]],
            self.cam_normals[f.verts[2]],
        ]
    }
}

/// Per-pixel winning face and depth.
pub(crate) fn zbuffer(prep: &Prepared, width: usize, height: usize) -> (Vec<f64>, Vec<i32>) {
    struct Span {
        face: usize,
        x0: usize,
        x1: usize,
        y0: usize,
        y1: usize,
    }
    let spans: Vec<Span> = prep
        .faces
        .iter()
        .enumerate()
        .filter_map(|(fi, f)| {
            let f = f.as_ref()?;
            let s = prep.tri_screen(f);
            let (mut lo, mut hi) = (s[0].xy(), s[0].xy());
            for p in &s[1..] {
                lo = lo.inf(&p.xy());
                hi = hi.sup(&p.xy());
            }
            // pixels whose centre lies in [lo, hi]
            let x0 = (lo.x - 0.5).ceil().max(0.0);
            let y0 = (lo.y - 0.5).ceil().max(0.0);
            let x1 = (hi.x - 0.5).floor().min(width as f64 - 1.0);
            let y1 = (hi.y - 0.5).floor().min(height as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            Some(Span {
                face: fi,
                x0: x0 as usize,
                x1: x1 as usize,
                y0: y0 as usize,
                y1: y1 as usize,
            })
        })
        .collect();

    let mut depth = vec![f64::INFINITY; width * height];
    let mut face = vec![-1i32; width * height];
    depth
        .par_chunks_mut(width * BAND_ROWS)
        .zip(face.par_chunks_mut(width * BAND_ROWS))
        .enumerate()
        .for_each(|(band, (dband, fband))| {
            let by0 = band * BAND_ROWS;
            let by1 = by0 + dband.len() / width;
            for sp in &spans {
                if sp.y1 < by0 || sp.y0 >= by1 {
                    continue;
                }
                let f = prep.faces[sp.face].as_ref().unwrap();
                let s3 = prep.tri_screen(f);
                let s2 = [s3[0].xy(), s3[1].xy(), s3[2].xy()];
                for y in sp.y0.max(by0)..=sp.y1.min(by1 - 1) {
                    for x in sp.x0..=sp.x1 {
                        let p = pixel_center(x, y);
                        if !covers(&s2, &f.verts, f.orient, &p) {
                            continue;
                        }
                        let d = shade(&s3, prep.perspective, &p).depth;
                        if !(d > 0.0) {
                            continue;
                        }
                        let idx = (y - by0) * width + x;
                        let cur = dband[idx];
                        if d < cur || (d == cur && (sp.face as i32) < fband[idx]) {
                            dband[idx] = d;
                            fband[idx] = sp.face as i32;
                        }
                    }
                }
            }
        });
    (depth, face)
}

fn raster_meshes(meshes: &[&Mesh], camera: &Camera, options: &RasterOptions) -> RenderOutput {
    let (w, h) = (camera.width, camera.height);
    let prep = Prepared::new(meshes, camera);
    let (zbuf, face_map) = zbuffer(&prep, w, h);

    let mut depth = ImageBuffer::depth(w, h);
    let mut normal = ImageBuffer::new(w, h, Semantic::Normal, 0.0);
    let mut rgb = options
        .render_rgb
        .then(|| ImageBuffer::new(w, h, Semantic::Rgb, 1.0));
    let mut instance_map = ImageBuffer::new(w, h, Semantic::Instance, 0.0);
    let mut parts: Option<PartMasks> = options.render_parts.then(BTreeMap::new);

    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let fi = face_map[idx];
            if fi < 0 {
                continue;
            }
            let f = prep.faces[fi as usize].as_ref().unwrap();
            let s3 = prep.tri_screen(f);
            let sh = shade(&s3, prep.perspective, &pixel_center(x, y));
            debug_assert_eq!(sh.depth, zbuf[idx]);
            depth.set(x, y, sh.depth);
            let flip = if f.front { 1.0 } else { -1.0 };
            normal.set3(
                x,
                y,
                shade_normal(&sh.mu, &prep.tri_normals(f), flip, &f.geometric),
            );
            instance_map.set(x, y, f.instance_id as f64);
            if let Some(rgb) = rgb.as_mut() {
                let gray = Vec3::repeat(0.5);
                let c = f
                    .verts
                    .iter()
                    .zip(sh.mu)
                    .map(|(&v, m)| prep.colors[v].unwrap_or(gray) * m)
                    .sum::<Vec3>();
                rgb.set3(x, y, c.map(|v| v.clamp(0.0, 1.0)));
            }
            if let (Some(parts), Some(part)) = (parts.as_mut(), f.part) {
                parts
                    .entry((f.instance_id, part))
                    .or_insert_with(|| ImageBuffer::mask(w, h))
                    .set(x, y, 1.0);
            }
        }
    }
    RenderOutput {
        depth,
        normal,
        rgb,
        instance_map,
        part_masks: parts,
        face_index_map: face_map,
    }
}

/// Render depth, normal, instance and optional RGB / part buffers.
pub fn rasterize(scene: &Scene, camera: &Camera, options: &RasterOptions) -> Result<RenderOutput> {
    camera.validate()?;
    if scene.is_empty() {
        return Err(GeomError::Empty("cannot rasterize an empty scene".into()));
    }
    let meshes: Vec<&Mesh> = scene.instances().iter().collect();
    Ok(match options.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| GeomError::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| raster_meshes(&meshes, camera, options))
        }
        None => raster_meshes(&meshes, camera, options),
    })
}

/// Background-safe helper: depth buffer value or `None` at background.
pub fn depth_at(depth: &ImageBuffer, x: usize, y: usize) -> Option<f64> {
    let d = depth.get(x, y);
    (d > 0.0 && d != DEPTH_BACKGROUND).then_some(d)
}
