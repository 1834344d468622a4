//! Reconstruction metrics: surface distances, normal agreement, contact
//! precision and image similarity, plus the report that collects them.

mod geometry;
mod image;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use geometry::{
    bbox_iou, chamfer, chamfer_with, contact_precision, fscore, normal_consistency, p2s, p2s_with, sample_surface,
    ChamferReduction, ContactPrecision, SampledSurface,
};
pub use image::{normal_map_l2, occlusion_masks, psnr, ssim};

use crate::camera::Camera;
use crate::canonical::{build_rig, RIG_DISTANCE};
use crate::error::{GeomError, Result};
use crate::image::ImageBuffer;
use crate::mesh::{Mesh, Scene};
use crate::render::{rasterize, RasterOptions, RenderOutput};

pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_FSCORE_TAU_CM: f64 = 1.0;
pub const DEFAULT_CONTACT_DELTA: f64 = 0.01;
pub const EVAL_AZIMUTHS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

/// A metric value whose non-finite values serialise as the strings `"inf"`,
/// `"-inf"` and `"nan"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score(pub f64);

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct ScoreVisitor;
        impl Visitor<'_> for ScoreVisitor {
            type Value = Score;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Score, E> {
                Ok(Score(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Score, E> {
                Ok(Score(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Score, E> {
                Ok(Score(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Score, E> {
                match v {
                    "inf" => Ok(Score(f64::INFINITY)),
                    "-inf" => Ok(Score(f64::NEG_INFINITY)),
                    "nan" => Ok(Score(f64::NAN)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(ScoreVisitor)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let v = self.0;
        if v.is_finite() {
            write!(f, "{v}")
        } else if v.is_nan() {
            f.write_str("nan")
        } else if v > 0.0 {
            f.write_str("inf")
        } else {
            f.write_str("-inf")
        }
    }
}

/// One set of metric values. Image metrics are absent when either scene has
/// no vertex colours; occlusion variants when no instance is occluded; `cp`
/// at instance level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub cd_cm: Option<Score>,
    pub p2s_cm: Option<Score>,
    pub nc: Option<Score>,
    pub fscore: Option<Score>,
    pub bbox_iou: Option<Score>,
    pub norm_l2: Option<Score>,
    pub cp: Option<Score>,
    pub psnr: Option<Score>,
    pub ssim: Option<Score>,
    pub occ_norm_l2: Option<Score>,
    pub occ_psnr: Option<Score>,
    pub occ_ssim: Option<Score>,
}

impl MetricValues {
    pub const KEYS: [&'static str; 12] = [
        "cd_cm",
        "p2s_cm",
        "nc",
        "fscore",
        "bbox_iou",
        "norm_l2",
        "cp",
        "psnr",
        "ssim",
        "occ_norm_l2",
        "occ_psnr",
        "occ_ssim",
    ];

    /// Values in `KEYS` order.
    pub fn values(&self) -> [Option<Score>; 12] {
        [
            self.cd_cm,
            self.p2s_cm,
            self.nc,
            self.fscore,
            self.bbox_iou,
            self.norm_l2,
            self.cp,
            self.psnr,
            self.ssim,
            self.occ_norm_l2,
            self.occ_psnr,
            self.occ_ssim,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene: MetricValues,
    pub instances: BTreeMap<u32, MetricValues>,
    /// Set when the prediction has no contact vertex (cp reported as 0).
    pub cp_flagged: bool,
    pub samples: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header plus one row of scene-level values; absent values are empty.
    pub fn to_csv(&self) -> String {
        let row: Vec<String> = self
            .scene
            .values()
            .iter()
            .map(|v| v.map(|s| s.to_string()).unwrap_or_default())
            .collect();
        format!("{}\n{}\n", MetricValues::KEYS.join(","), row.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Surface samples per instance.
    pub samples: usize,
    pub seed: u64,
    pub fscore_tau_cm: f64,
    pub contact_delta: f64,
    pub chamfer: ChamferReduction,
    pub p2s_squared: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            fscore_tau_cm: DEFAULT_FSCORE_TAU_CM,
            contact_delta: DEFAULT_CONTACT_DELTA,
            chamfer: ChamferReduction::Sum,
            p2s_squared: false,
        }
    }
}

/// The four orthographic evaluation cameras (azimuths 0°, 90°, 180°, 270° of
/// the canonical rig).
pub fn evaluation_cameras(width: usize, height: usize) -> Result<Vec<Camera>> {
    let rig = build_rig(RIG_DISTANCE, width, height)?;
    Ok(rig
        .views
        .into_iter()
        .filter(|v| EVAL_AZIMUTHS.contains(&v.azimuth_deg))
        .map(|v| v.camera)
        .collect())
}

/// Mean squared normal difference pooled over the foreground union of all
/// views, with both scenes rendered from each camera.
pub fn l2_normal_error(pred: &Scene, gt: &Scene, cameras: &[Camera]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0);
    for cam in cameras {
        let a = rasterize(pred, cam, &RasterOptions::default())?;
        let b = rasterize(gt, cam, &RasterOptions::default())?;
        let (s, c) = image::normal_error_sum(&a.normal, &b.normal, None)?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(GeomError::Empty("both scenes render to background in every view".into()));
    }
    Ok(sum / count as f64)
}

fn instance_seed(seed: u64, id: u32) -> u64 {
    seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn colored(scene: &Scene) -> bool {
    scene.instances().iter().all(|m| m.vertex_colors().is_some())
}

struct ViewRenders {
    group: RenderOutput,
    alone: BTreeMap<u32, RenderOutput>,
}

fn render_views(scene: &Scene, cameras: &[Camera], rgb: bool) -> Result<Vec<ViewRenders>> {
    let opts = RasterOptions {
        render_rgb: rgb,
        ..RasterOptions::default()
    };
    cameras
        .par_iter()
        .map(|cam| {
            let group = rasterize(scene, cam, &opts)?;
            let alone = scene
                .instances()
                .iter()
                .map(|m| Ok((m.instance_id(), rasterize(&Scene::new(vec![m.clone()])?, cam, &opts)?)))
                .collect::<Result<_>>()?;
            Ok(ViewRenders { group, alone })
        })
        .collect()
}

fn union(a: &RenderOutput, b: &RenderOutput) -> ImageBuffer {
    a.foreground().mask_or(&b.foreground())
}

fn geometric(pred: &SampledSurface, gt_samples: &SampledSurface, gt_mesh: &Mesh, opts: &EvalOptions) -> Result<MetricValues> {
    Ok(MetricValues {
        cd_cm: Some(Score(chamfer_with(pred, gt_samples, opts.chamfer)?)),
        p2s_cm: Some(Score(p2s_with(pred, gt_mesh, opts.p2s_squared)?)),
        nc: Some(Score(normal_consistency(pred, gt_samples)?)),
        fscore: Some(Score(fscore(pred, gt_samples, opts.fscore_tau_cm)?)),
        ..MetricValues::default()
    })
}

/// Merge all instances of a scene into one mesh (for scene-level P2S and
/// bounding boxes).
fn merged(scene: &Scene) -> Result<Mesh> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for m in scene.instances() {
        let off = verts.len() as u32;
        verts.extend_from_slice(m.vertices());
        faces.extend(m.faces().iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    }
    Mesh::new(verts, faces, 0)
}

fn mean_of(values: &[f64]) -> Option<Score> {
    (!values.is_empty()).then(|| Score(values.iter().sum::<f64>() / values.len() as f64))
}

/// Full report of `pred` against `gt`. Instances are matched by id; surface
/// samples use the same per-instance seed on both sides, so identical scenes
/// score exactly. Contact precision is reported for two-instance scenes.
pub fn evaluate(pred: &Scene, gt: &Scene, cameras: &[Camera], opts: &EvalOptions) -> Result<MetricReport> {
    let ids = |s: &Scene| s.instances().iter().map(|m| m.instance_id()).collect::<Vec<_>>();
    if ids(pred) != ids(gt) {
        return Err(GeomError::InvalidScene(format!(
            "instance ids differ: prediction {:?}, ground truth {:?}",
            ids(pred),
            ids(gt)
        )));
    }
    if cameras.is_empty() {
        return Err(GeomError::InvalidParameter("evaluation needs at least one camera".into()));
    }
    let sample = |s: &Scene| {
        s.instances()
            .par_iter()
            .map(|m| sample_surface(m, opts.samples, instance_seed(opts.seed, m.instance_id())))
            .collect::<Result<Vec<_>>>()
    };
    let (ps, gs) = (sample(pred)?, sample(gt)?);

    let mut instances = BTreeMap::new();
    for (k, (pm, gm)) in pred.instances().iter().zip(gt.instances()).enumerate() {
        let mut v = geometric(&ps[k], &gs[k], gm, opts)?;
        v.bbox_iou = Some(Score(bbox_iou(pm, gm)?));
        instances.insert(pm.instance_id(), v);
    }
    let (pred_all, gt_all) = (merged(pred)?, merged(gt)?);
    let mut scene = geometric(&SampledSurface::concat(&ps), &SampledSurface::concat(&gs), &gt_all, opts)?;
    scene.bbox_iou = Some(Score(bbox_iou(&pred_all, &gt_all)?));

    let mut cp_flagged = false;
    if pred.instances().len() == 2 {
        let cp = contact_precision(pred, gt, opts.contact_delta)?;
        scene.cp = Some(Score(cp.cp));
        cp_flagged = cp.is_flagged();
    }

    let rgb = colored(pred) && colored(gt);
    let pr = render_views(pred, cameras, rgb)?;
    let gr = render_views(gt, cameras, rgb)?;

    // scene-level normal and image terms, pooled over the foreground union
    let (mut nsum, mut ncount) = (0.0, 0);
    let (mut esum, mut ecount) = (0.0, 0);
    let mut ssims = Vec::new();
    let mut inst_norm: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    let mut occ_norm: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let (mut occ_psnr, mut occ_ssim) = (Vec::new(), Vec::new());
    for (p, g) in pr.iter().zip(&gr) {
        let (s, c) = image::normal_error_sum(&p.group.normal, &g.group.normal, None)?;
        nsum += s;
        ncount += c;
        let fg = union(&p.group, &g.group);
        if rgb && fg.count_set() > 0 {
            let (pi, gi) = (p.group.rgb.as_ref().unwrap(), g.group.rgb.as_ref().unwrap());
            let (s, c) = image::squared_error(pi, gi, Some(&fg))?;
            esum += s;
            ecount += c;
            ssims.push(ssim(pi, gi, Some(&fg))?);
        }
        let silhouettes: BTreeMap<u32, ImageBuffer> =
            g.alone.iter().map(|(&id, r)| (id, r.foreground())).collect();
        let occlusion = occlusion_masks(&silhouettes, &g.group.instance_map)?;
        for (id, mask) in &occlusion {
            let (pa, ga) = (&p.alone[id], &g.alone[id]);
            let (s, c) = image::normal_error_sum(&pa.normal, &ga.normal, None)?;
            let e = inst_norm.entry(*id).or_default();
            e.0 += s;
            e.1 += c;
            if mask.count_set() == 0 {
                continue;
            }
            occ_norm.entry(*id).or_default().push(normal_map_l2(&pa.normal, &ga.normal, Some(mask))?);
            if rgb {
                let (pi, gi) = (pa.rgb.as_ref().unwrap(), ga.rgb.as_ref().unwrap());
                occ_psnr.push(psnr(pi, gi, Some(mask))?);
                occ_ssim.push(ssim(pi, gi, Some(mask))?);
            }
        }
    }
    if ncount == 0 {
        return Err(GeomError::Empty("both scenes render to background in every view".into()));
    }
    scene.norm_l2 = Some(Score(nsum / ncount as f64));
    if ecount > 0 {
        scene.psnr = Some(Score(image::psnr_from_mse(esum / ecount as f64)));
        scene.ssim = mean_of(&ssims);
    }
    for (id, v) in instances.iter_mut() {
        if let Some(&(s, c)) = inst_norm.get(id) {
            v.norm_l2 = (c > 0).then(|| Score(s / c as f64));
        }
        v.occ_norm_l2 = occ_norm.get(id).and_then(|x| mean_of(x));
    }
    let all_occ: Vec<f64> = occ_norm.values().flatten().copied().collect();
    scene.occ_norm_l2 = mean_of(&all_occ);
    scene.occ_psnr = mean_of(&occ_psnr);
    scene.occ_ssim = mean_of(&occ_ssim);

    Ok(MetricReport {
        scene,
        instances,
        cp_flagged,
        samples: opts.samples,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::primitives::icosphere;

    fn pair(offset: f64, colors: bool) -> Scene {
        let mk = |c: Vec3, id: u32| {
            let m = icosphere(c, 0.3, 2, id).unwrap();
            if colors {
                let n = m.vertices().len();
                m.with_colors((0..n).map(|i| [0.2 + 0.5 * (i % 2) as f64, 0.4, 0.1 * id as f64]).collect())
                    .unwrap()
            } else {
                m
            }
        };
        Scene::new(vec![mk(Vec3::new(-0.3 + offset, 0.0, 0.0), 1), mk(Vec3::new(0.3, 0.0, 0.0), 2)]).unwrap()
    }

    fn opts() -> EvalOptions {
        EvalOptions {
            samples: 4000,
            ..EvalOptions::default()
        }
    }

    #[test]
    fn identity_scene_scores_perfectly() {
        let gt = pair(0.0, true);
        let cams = evaluation_cameras(48, 48).unwrap();
        let r = evaluate(&gt, &gt, &cams, &opts()).unwrap();
        let s = &r.scene;
        assert_eq!(s.cd_cm, Some(Score(0.0)));
        assert!(s.p2s_cm.unwrap().0 < 1e-9);
        assert!((s.nc.unwrap().0 - 1.0).abs() < 1e-12);
        assert_eq!(s.fscore, Some(Score(100.0)));
        assert_eq!(s.bbox_iou, Some(Score(1.0)));
        assert_eq!(s.norm_l2, Some(Score(0.0)));
        assert_eq!(s.cp, Some(Score(1.0)));
        assert_eq!(s.psnr, Some(Score(f64::INFINITY)));
        assert_eq!(s.ssim, Some(Score(1.0)));
        assert_eq!(s.occ_norm_l2, Some(Score(0.0)));
        assert_eq!(s.occ_psnr, Some(Score(f64::INFINITY)));
        assert!(!r.cp_flagged);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"psnr\": \"inf\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.scene.psnr, Some(Score(f64::INFINITY)));
        assert!(r.to_csv().starts_with("cd_cm,p2s_cm,nc,"));
    }

    #[test]
    fn uncoloured_scenes_skip_image_metrics() {
        let gt = pair(0.0, false);
        let r = evaluate(&pair(0.02, false), &gt, &evaluation_cameras(32, 32).unwrap(), &opts()).unwrap();
        assert!(r.scene.psnr.is_none() && r.scene.ssim.is_none());
        assert!(r.scene.cd_cm.unwrap().0 > 0.0);
        assert!(r.scene.norm_l2.unwrap().0 > 0.0);
        for v in r.scene.values().iter().flatten() {
            assert!(v.0.is_finite());
        }
    }

    #[test]
    fn scene_chamfer_averages_disjoint_instances() {
        let far = |dx: f64| {
            Scene::new(vec![
                icosphere(Vec3::new(-2.0 + dx, 0.0, 0.0), 0.3, 2, 1).unwrap(),
                icosphere(Vec3::new(2.0, 0.0, 0.0), 0.3, 2, 2).unwrap(),
            ])
            .unwrap()
        };
        let r = evaluate(&far(0.01), &far(0.0), &evaluation_cameras(16, 16).unwrap(), &opts()).unwrap();
        let mean = r.instances.values().map(|v| v.cd_cm.unwrap().0).sum::<f64>() / 2.0;
        assert!((r.scene.cd_cm.unwrap().0 - mean).abs() < 1e-9);
    }

    #[test]
    fn mismatched_instances_are_rejected() {
        let single = Scene::new(vec![icosphere(Vec3::zeros(), 0.3, 1, 1).unwrap()]).unwrap();
        assert!(evaluate(&single, &pair(0.0, false), &evaluation_cameras(16, 16).unwrap(), &opts()).is_err());
    }

    #[test]
    fn evaluation_views_are_quarter_turns() {
        let cams = evaluation_cameras(32, 32).unwrap();
        assert_eq!(cams.len(), 4);
        assert!((cams[1].center() - Vec3::new(3.0, 0.0, 0.0)).norm() < 1e-9);
    }
}
