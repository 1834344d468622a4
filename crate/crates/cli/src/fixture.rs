//! Synthetic two-person scene used for end-to-end runs: two capsule figures
//! with part labels, person 1 reaching around person 2's back. Ground truth,
//! a perturbed initialization and all rendered inputs are written in the
//! layout the subcommands read.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Result;
use hug_geom::canonical::{build_rig, look_at, CanonicalRig, Normalization};
use hug_geom::io;
use hug_geom::primitives::{capsule, merge};
use hug_geom::refine::{contact_pairs_from_meshes, pair_separation, PartPairSet};
use hug_geom::{compute_vertex_normals, rasterize, Camera, Mesh, RasterOptions, Scene, Vec3};
use hug_geom::texture::DEFAULT_CONFIDENCE_DILATE;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layout::{self, instance_normal_file, part_mask_file, view_dir};

pub const TORSO: u32 = 0;
pub const HEAD: u32 = 1;

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub rig_size: usize,
    pub input_size: usize,
    pub seed: u64,
    /// Amplitude of the smooth normal-direction perturbation, meters.
    pub smooth_amplitude: f64,
    /// Amplitude of the per-vertex normal-direction noise, meters.
    pub noise_amplitude: f64,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            rig_size: 96,
            input_size: 128,
            seed: 7,
            smooth_amplitude: 0.008,
            noise_amplitude: 0.003,
        }
    }
}

struct Limb {
    a: Vec3,
    b: Vec3,
    radius: f64,
    label: u32,
}

fn limb(a: [f64; 3], b: [f64; 3], radius: f64, label: u32) -> Limb {
    Limb {
        a: Vec3::from(a),
        b: Vec3::from(b),
        radius,
        label,
    }
}

fn build_figure(limbs: &[Limb], id: u32) -> Result<Mesh> {
    let parts = limbs
        .iter()
        .map(|l| {
            let rings = (((l.b - l.a).norm() / 0.04).ceil() as usize).max(2);
            capsule(l.a, l.b, l.radius, 16, rings, 4, id)
        })
        .collect::<hug_geom::Result<Vec<_>>>()?;
    let labels: Vec<u32> = limbs.iter().map(|l| l.label).collect();
    Ok(merge(&parts, &labels, id)?)
}

const PALETTE: [[f64; 3]; 8] = [
    [0.80, 0.25, 0.20],
    [0.95, 0.80, 0.65],
    [0.20, 0.45, 0.80],
    [0.25, 0.70, 0.35],
    [0.85, 0.65, 0.15],
    [0.55, 0.30, 0.70],
    [0.30, 0.30, 0.35],
    [0.60, 0.60, 0.55],
];

fn colorize(mesh: Mesh, tint: f64) -> Result<Mesh> {
    let labels = mesh.part_labels().expect("figures carry part labels").to_vec();
    let colors = labels
        .iter()
        .map(|&l| PALETTE[l as usize % PALETTE.len()].map(|c| (c * tint).min(1.0)))
        .collect();
    Ok(mesh.with_colors(colors)?)
}

/// One standing figure centred at `x`; `side` is +1 when the figure's inner
/// side faces +x. When `reach` is set the inner arm wraps behind a torso at
/// `x + 0.56·side`.
fn figure(x: f64, side: f64, reach: bool, id: u32) -> Result<(Mesh, Vec<Vec3>)> {
    let s = side;
    let (inner_elbow, inner_hand) = if reach {
        ([x + 0.40 * s, 1.30, -0.18], [x + 0.68 * s, 1.25, -0.20])
    } else {
        ([x + 0.23 * s, 1.12, 0.03], [x + 0.24 * s, 0.88, 0.08])
    };
    let outer_elbow = [x - 0.24 * s, 1.12, 0.02];
    let outer_hand = [x - 0.25 * s, 0.88, 0.06];
    let inner_shoulder = [x + 0.20 * s, 1.40, 0.0];
    let outer_shoulder = [x - 0.20 * s, 1.40, 0.0];
    let limbs = [
        limb([x, 0.95, 0.0], [x, 1.35, 0.0], 0.14, TORSO),
        limb([x, 1.55, 0.0], [x, 1.62, 0.0], 0.10, HEAD),
        limb(outer_shoulder, outer_elbow, 0.045, 2),
        limb(outer_elbow, outer_hand, 0.04, 3),
        limb(inner_shoulder, inner_elbow, 0.045, 4),
        limb(inner_elbow, inner_hand, 0.04, 5),
        limb([x - 0.08 * s, 0.92, 0.0], [x - 0.09 * s, 0.10, 0.0], 0.06, 6),
        limb([x + 0.08 * s, 0.92, 0.0], [x + 0.09 * s, 0.10, 0.0], 0.06, 7),
    ];
    let joints = [
        [x, 1.45, 0.0],
        [x, 0.95, 0.0],
        outer_shoulder,
        outer_elbow,
        outer_hand,
        inner_shoulder,
        inner_elbow,
        inner_hand,
        [x - 0.08 * s, 0.92, 0.0],
        [x - 0.09 * s, 0.10, 0.0],
        [x + 0.08 * s, 0.92, 0.0],
        [x + 0.09 * s, 0.10, 0.0],
    ]
    .map(Vec3::from)
    .to_vec();
    Ok((build_figure(&limbs, id)?, joints))
}

/// Coloured, part-labelled ground truth (instances 1 and 2) and joints.
pub fn ground_truth() -> Result<(Scene, BTreeMap<u32, Vec<Vec3>>)> {
    let (a, ja) = figure(-0.28, 1.0, true, 1)?;
    let (b, jb) = figure(0.28, -1.0, false, 2)?;
    let scene = Scene::new(vec![colorize(a, 1.0)?, colorize(b, 0.85)?])?;
    Ok((scene, BTreeMap::from([(1, ja), (2, jb)])))
}

/// Displace every vertex along its normal by a smooth random field plus
/// per-vertex noise; colours are dropped.
pub fn perturb(scene: &Scene, opts: &FixtureOptions) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let waves: Vec<(Vec3, f64)> = (0..6)
        .map(|_| {
            let dir = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let freq = rng.gen_range(6.0..14.0);
            (dir * freq, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let meshes = scene
        .instances()
        .iter()
        .map(|m| {
            let normals = compute_vertex_normals(m).normals;
            let verts = m
                .vertices()
                .iter()
                .zip(&normals)
                .map(|(p, n)| {
                    let smooth: f64 =
                        waves.iter().map(|(k, phase)| (k.dot(p) + phase).sin()).sum::<f64>() / (waves.len() as f64).sqrt();
                    let noise = rng.gen_range(-1.0..1.0);
                    p + n * (opts.smooth_amplitude * smooth + opts.noise_amplitude * noise)
                })
                .collect();
            Ok(m.clone().without_colors().with_vertices(verts)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene::new(meshes)?)
}

/// Contact pairs of the initialization, leaving out part pairs that overlap
/// at a figure's own joints (capsule parts share no faces, so adjacency
/// cannot be read off the mesh).
pub fn penetration_pairs(init: &Scene, gt: &Scene) -> Result<PartPairSet> {
    let mut pairs = PartPairSet::new();
    for p in contact_pairs_from_meshes(init, 0.03)? {
        if pair_separation(gt, &p)?.is_some_and(|s| s.distance > 0.0) {
            pairs.insert(p);
        }
    }
    Ok(pairs)
}

/// Perspective camera in front of the pair, slightly to the right and above.
pub fn input_camera(size: usize) -> Result<Camera> {
    let (r, t) = look_at(&Vec3::new(0.4, 1.3, 3.2), &Vec3::new(0.0, 0.9, 0.0), &Vec3::y())?;
    let f = 1.6 * size as f64;
    let c = size as f64 / 2.0;
    Ok(Camera::perspective(f, f, c, c, r, t, size, size)?)
}

fn full_render() -> RasterOptions {
    RasterOptions {
        render_rgb: true,
        render_parts: true,
        threads: None,
    }
}

/// Targets for every rig view: group and per-instance normals, RGB, a
/// foreground mask and visible part masks, all rendered from `gt`.
pub fn write_targets(dir: &Path, gt: &Scene, rig: &CanonicalRig) -> Result<()> {
    let world = rig.in_world()?;
    layout::write_rig_files(dir, rig)?;
    for view in &world.views {
        let vd = view_dir(dir, view.azimuth_deg);
        let out = rasterize(gt, &view.camera, &full_render())?;
        io::write_png(&vd.join("rgb.png"), out.rgb.as_ref().expect("coloured ground truth"))?;
        io::write_png(&vd.join("mask.png"), &out.foreground())?;
        io::write_pfm(&vd.join("normal.pfm"), &out.normal)?;
        for (&(k, p), mask) in out.part_masks.as_ref().expect("part masks requested") {
            if mask.count_set() > 0 {
                io::write_png(&part_mask_file(&vd, k, p), mask)?;
            }
        }
        for m in gt.instances() {
            let alone = Scene::new(vec![m.clone()])?;
            let r = rasterize(&alone, &view.camera, &RasterOptions::default())?;
            io::write_pfm(&instance_normal_file(&vd, m.instance_id()), &r.normal)?;
        }
    }
    Ok(())
}

const CONFIG: &str = r#"{
  "seed": 0,
  "paths": {
    "input_rgb": "input/rgb.png",
    "input_camera": "input/camera.json",
    "input_depth": "input/depth.pfm",
    "input_normal": "input/normal.pfm",
    "init": "init",
    "targets": "targets",
    "gt": "gt",
    "joints": "joints.json",
    "pairs": "pairs.json"
  },
  "rig": { "width": RIG, "height": RIG },
  "optimization": { "iters": 200, "base_lr": 0.0005 },
  "texture": { "dilate_kernel": DILATE },
  "evaluate": { "samples": 20000, "render_size": RIG }
}
"#;

/// Write the complete fixture under `dir`.
pub fn write_fixture(dir: &Path, opts: &FixtureOptions) -> Result<()> {
    let (gt, joints) = ground_truth()?;
    let init = perturb(&gt, opts)?;
    layout::write_scene(&dir.join("gt"), &gt)?;
    layout::write_scene(&dir.join("init"), &init)?;
    layout::write_joints(&dir.join("joints.json"), &joints)?;
    layout::write_pairs(&dir.join("pairs.json"), &penetration_pairs(&init, &gt)?)?;

    let cam = input_camera(opts.input_size)?;
    let input = rasterize(&gt, &cam, &full_render())?;
    let input_dir = dir.join("input");
    io::write_png(&input_dir.join("rgb.png"), input.rgb.as_ref().expect("coloured ground truth"))?;
    io::write_pfm(&input_dir.join("depth.pfm"), &input.depth)?;
    io::write_pfm(&input_dir.join("normal.pfm"), &input.normal)?;
    io::write_camera(&input_dir.join("camera.json"), &cam)?;

    // targets share the normalization the pipeline fits to the initialization
    let rig = build_rig(hug_geom::canonical::RIG_DISTANCE, opts.rig_size, opts.rig_size)?
        .with_normalization(Normalization::fit(&init, hug_geom::canonical::DEFAULT_PADDING)?);
    write_targets(&dir.join("targets"), &gt, &rig)?;

    // the default edge band is sized for 768-pixel views; keep it odd
    let dilate = (DEFAULT_CONFIDENCE_DILATE * opts.rig_size / 768) | 1;
    let config = CONFIG
        .replace("RIG", &opts.rig_size.to_string())
        .replace("DILATE", &dilate.to_string());
    io::write_atomic(&dir.join("config.json"), config.as_bytes())?;
    Ok(())
}
