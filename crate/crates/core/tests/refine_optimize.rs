use std::collections::BTreeMap;

use hug_geom::canonical::{build_rig, CanonicalRig};
use hug_geom::primitives::{capsule, icosphere, merge};
use hug_geom::refine::{
    contact_pairs_from_meshes, min_separation, optimize, FrozenState, NormalTargets, OptimizationConfig, PartPair,
    PartPairSet, RefineProblem,
};
use hug_geom::render::PartMasks;
use hug_geom::{rasterize, Mesh, RasterOptions, Scene, Vec3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn sphere_pair(overlap: f64, subdivisions: usize) -> Scene {
    let r = 0.3;
    let a = icosphere(Vec3::new(-r + overlap / 2.0, 0.0, 0.0), r, subdivisions, 1).unwrap();
    let b = icosphere(Vec3::new(r - overlap / 2.0, 0.0, 0.0), r, subdivisions, 2).unwrap();
    let la = vec![0; a.vertices().len()];
    let lb = vec![0; b.vertices().len()];
    Scene::new(vec![a.with_part_labels(la).unwrap(), b.with_part_labels(lb).unwrap()]).unwrap()
}

/// Torso sphere plus a detached arm capsule, labelled 0 and 1.
fn blob_figure(center: Vec3, arm_dir: f64, id: u32) -> Mesh {
    let torso = icosphere(center, 0.25, 2, id).unwrap();
    let shoulder = center + Vec3::new(0.36 * arm_dir, -0.1, 0.0);
    let hand = shoulder + Vec3::new(0.35 * arm_dir, 0.1, 0.05);
    let arm = capsule(shoulder, hand, 0.07, 12, 4, 3, id).unwrap();
    merge(&[torso, arm], &[0, 1], id).unwrap()
}

struct Supervision {
    targets: NormalTargets,
    vis: BTreeMap<usize, PartMasks>,
}

fn render_supervision(scene: &Scene, rig: &CanonicalRig) -> Supervision {
    let mut targets = NormalTargets::default();
    let mut vis = BTreeMap::new();
    let opts = RasterOptions {
        render_parts: true,
        ..RasterOptions::default()
    };
    for (v, cam) in rig.views.iter().enumerate() {
        let out = rasterize(scene, &cam.camera, &opts).unwrap();
        targets.group.insert(v, out.normal);
        vis.insert(v, out.part_masks.unwrap());
        for m in scene.instances() {
            let alone = Scene::new(vec![m.clone()]).unwrap();
            let one = rasterize(&alone, &cam.camera, &RasterOptions::default()).unwrap();
            targets.instance.insert((v, m.instance_id()), one.normal);
        }
    }
    Supervision { targets, vis }
}

fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    trace.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[test]
fn penetration_only_separates_spheres() {
    let scene = sphere_pair(0.02, 2);
    let pairs: PartPairSet = [PartPair::new(1, 0, 2, 0).unwrap()].into();
    let rig = build_rig(3.0, 32, 32).unwrap();
    let (targets, vis, joints) = (NormalTargets::default(), BTreeMap::new(), BTreeMap::new());
    let problem = RefineProblem {
        targets: &targets,
        gt_visibility: &vis,
        pairs: &pairs,
        rig: &rig,
        joints: &joints,
    };
    let config = OptimizationConfig {
        lambda_group: 0.0,
        lambda_inst: 0.0,
        lambda_vis: 0.0,
        ..OptimizationConfig::default()
    };
    let before = min_separation(&scene, &pairs).unwrap().unwrap();
    assert!(before < -0.015);
    let out = optimize(&scene, &problem, &config).unwrap();
    let after = min_separation(&out.scene, &pairs).unwrap().unwrap();
    assert!(after >= -1e-3, "separation {after}");
    let seps: Vec<f64> = out.trace.iter().map(|t| t.min_separation.unwrap()).collect();
    let avg = smoothed(&seps, 5);
    for (i, w) in avg.windows(2).enumerate() {
        assert!(w[1] >= w[0] - 1e-12, "smoothed separation drops at {i}: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn targets_rendered_from_the_scene_are_a_fixed_point() {
    let scene = Scene::new(vec![
        blob_figure(Vec3::new(-0.35, 0.0, 0.0), -1.0, 1),
        blob_figure(Vec3::new(0.35, 0.0, 0.0), 1.0, 2),
    ])
    .unwrap();
    let rig = build_rig(3.0, 48, 48).unwrap();
    let sup = render_supervision(&scene, &rig);
    let pairs = contact_pairs_from_meshes(&scene, 0.2).unwrap();
    let joints = BTreeMap::new();
    let problem = RefineProblem {
        targets: &sup.targets,
        gt_visibility: &sup.vis,
        pairs: &pairs,
        rig: &rig,
        joints: &joints,
    };
    let out = optimize(&scene, &problem, &OptimizationConfig::default()).unwrap();
    let moved = scene
        .instances()
        .iter()
        .zip(out.scene.instances())
        .flat_map(|(a, b)| a.vertices().iter().zip(b.vertices()).map(|(p, q)| (p - q).norm()))
        .fold(0.0, f64::max);
    assert!(moved <= 1e-4, "max displacement {moved}");
    assert!(out.max_displacement <= 1e-4, "iterates drifted {}", out.max_displacement);
    assert_eq!(out.trace.len(), 201);
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let gt = Scene::new(vec![
        blob_figure(Vec3::new(-0.22, 0.0, 0.0), -1.0, 1),
        blob_figure(Vec3::new(0.22, 0.0, 0.0), 1.0, 2),
    ])
    .unwrap();
    assert!(gt.vertex_count() >= 500);
    let rig = build_rig(3.0, 40, 40).unwrap();
    let sup = render_supervision(&gt, &rig);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noisy: Vec<Vec<Vec3>> = gt
        .instances()
        .iter()
        .map(|m| {
            m.vertices()
                .iter()
                .map(|p| p + Vec3::from_fn(|_, _| rng.gen_range(-0.01..0.01)))
                .collect()
        })
        .collect();
    let scene = gt.with_vertices(noisy).unwrap();
    let pairs: PartPairSet = [PartPair::new(1, 0, 2, 0).unwrap()].into();
    let joints = BTreeMap::new();
    let problem = RefineProblem {
        targets: &sup.targets,
        gt_visibility: &sup.vis,
        pairs: &pairs,
        rig: &rig,
        joints: &joints,
    };
    let config = OptimizationConfig::default();
    let frozen = FrozenState::capture(&scene, &problem, &config).unwrap();
    let (terms, grads) = frozen.evaluate(&scene, &problem, &config).unwrap();
    assert!(terms.pen > 0.0 && terms.normal > 0.0);

    let flat: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(k, g)| g.iter().enumerate().filter(|(_, v)| v.norm() > 1e-4).map(move |(i, _)| (k, i)))
        .collect();
    let picks: Vec<&(usize, usize)> = flat.choose_multiple(&mut rng, 10).collect();
    assert_eq!(picks.len(), 10);
    let h = 1e-4;
    for &&(k, vi) in &picks {
        let mut fd = Vec3::zeros();
        for c in 0..3 {
            let eval = |d: f64| {
                let mut verts: Vec<Vec<Vec3>> = scene.instances().iter().map(|m| m.vertices().to_vec()).collect();
                verts[k][vi][c] += d;
                let moved = scene.clone().with_vertices(verts).unwrap();
                frozen.evaluate(&moved, &problem, &config).unwrap().0.total
            };
            fd[c] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        let g = grads[k][vi];
        assert!((g - fd).norm() <= 0.02 * fd.norm(), "instance {k} vertex {vi}: {g:?} vs {fd:?}");
    }
}
