use std::collections::BTreeSet;

use log::warn;

use super::{PartPair, PartPairSet};
use crate::error::{GeomError, Result};
use crate::math::{sigmoid, softplus, Vec3};
use crate::mesh::{compute_vertex_normals, Mesh, Scene};
use crate::spatial::{KdTree, TriangleBvh};

pub const DEFAULT_CONTACT_RADIUS: f64 = 0.02;
pub const FITTING_TOL: f64 = 0.02;
pub const FITTING_GAMMA: f64 = 15.0;

/// Softplus temperature of the penetration barrier.
pub fn penetration_temperature(tol: f64) -> f64 {
    (0.25 * tol).max(1e-5)
}

fn labels(mesh: &Mesh) -> Result<&[u32]> {
    mesh.part_labels().ok_or_else(|| {
        GeomError::InvalidMesh(format!("instance {} has no part labels", mesh.instance_id()))
    })
}

// Label pairs that share a face, i.e. meet along a seam.
fn adjacent_parts(mesh: &Mesh, labels: &[u32]) -> BTreeSet<(u32, u32)> {
    let mut adj = BTreeSet::new();
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (labels[f[k] as usize], labels[f[(k + 1) % 3] as usize]);
            if a != b {
                adj.insert((a.min(b), a.max(b)));
            }
        }
    }
    adj
}

/// Part pairs with at least one vertex of each within `radius` of the other.
/// Within one instance, a part is never paired with itself or with a part it
/// shares a face with.
pub fn contact_pairs_from_meshes(scene: &Scene, radius: f64) -> Result<PartPairSet> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(GeomError::InvalidParameter(format!("contact radius {radius}")));
    }
    let meshes = scene.instances();
    let all_labels = meshes.iter().map(labels).collect::<Result<Vec<_>>>()?;
    let trees: Vec<KdTree> = meshes.iter().map(|m| KdTree::new(m.vertices())).collect();
    let r2 = radius * radius;
    let mut pairs = PartPairSet::new();
    for (a, ma) in meshes.iter().enumerate() {
        let adj = adjacent_parts(ma, all_labels[a]);
        for (b, mb) in meshes.iter().enumerate().skip(a) {
            for (vi, v) in ma.vertices().iter().enumerate() {
                let la = all_labels[a][vi];
                for j in trees[b].within(v, r2) {
                    let lb = all_labels[b][j];
                    if a == b && (la == lb || adj.contains(&(la.min(lb), la.max(lb)))) {
                        continue;
                    }
                    if let Some(p) = PartPair::new(ma.instance_id(), la, mb.instance_id(), lb) {
                        pairs.insert(p);
                    }
                }
            }
        }
    }
    Ok(pairs)
}

/// Closest vertex-to-surface correspondence between two parts, frozen for a
/// gradient step. `distance` is negative when the vertex lies behind the
/// other part's surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub distance: f64,
    /// Scene position of the mesh owning the vertex, and the vertex index.
    pub vertex: (usize, usize),
    /// Scene position of the mesh owning the surface, and its face.
    pub face: (usize, [u32; 3]),
    pub bary: [f64; 3],
    pub sign: f64,
    /// Interpolated surface normal at the closest point.
    pub normal: Vec3,
}

struct PartSurface {
    mesh: usize,
    faces: Vec<[u32; 3]>,
    vertices: Vec<usize>,
    bvh: TriangleBvh,
}

fn part_surface(scene: &Scene, instance: u32, part: u32) -> Result<PartSurface> {
    let pos = scene
        .instances()
        .iter()
        .position(|m| m.instance_id() == instance)
        .ok_or_else(|| GeomError::InvalidScene(format!("no instance {instance}")))?;
    let m = &scene.instances()[pos];
    let l = labels(m)?;
    let faces: Vec<[u32; 3]> = (0..m.faces().len())
        .filter(|&f| m.face_part(f) == Some(part))
        .map(|f| m.faces()[f])
        .collect();
    let vertices = (0..m.vertices().len()).filter(|&v| l[v] == part).collect();
    let bvh = TriangleBvh::new(m.vertices(), &faces);
    Ok(PartSurface {
        mesh: pos,
        faces,
        vertices,
        bvh,
    })
}

fn closest_signed(
    scene: &Scene,
    normals: &[Vec<Vec3>],
    from: &PartSurface,
    to: &PartSurface,
) -> Option<Separation> {
    if to.faces.is_empty() {
        return None;
    }
    let src = &scene.instances()[from.mesh];
    let mut best: Option<Separation> = None;
    for &v in &from.vertices {
        let p = src.vertices()[v];
        let hit = to.bvh.closest(&p)?;
        let f = to.faces[hit.face];
        let n: Vec3 = (0..3).map(|k| normals[to.mesh][f[k] as usize] * hit.bary[k]).sum();
        let n = n.try_normalize(1e-12).unwrap_or_else(Vec3::zeros);
        let sign = if (p - hit.point).dot(&n) < 0.0 { -1.0 } else { 1.0 };
        let d = sign * hit.dist_sq.sqrt();
        if best.as_ref().is_none_or(|b| d < b.distance) {
            best = Some(Separation {
                distance: d,
                vertex: (from.mesh, v),
                face: (to.mesh, f),
                bary: hit.bary,
                sign,
                normal: n,
            });
        }
    }
    best
}

fn scene_normals(scene: &Scene) -> Vec<Vec<Vec3>> {
    scene.instances().iter().map(|m| compute_vertex_normals(m).normals).collect()
}

fn pair_separation_with(scene: &Scene, normals: &[Vec<Vec3>], pair: &PartPair) -> Result<Option<Separation>> {
    let s1 = part_surface(scene, pair.instance_a, pair.part_a)?;
    let s2 = part_surface(scene, pair.instance_b, pair.part_b)?;
    let a = closest_signed(scene, normals, &s1, &s2);
    let b = closest_signed(scene, normals, &s2, &s1);
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(if b.distance < a.distance { b } else { a }),
        (a, b) => a.or(b),
    })
}

/// Signed minimum distance between two part surfaces, over vertices of each
/// part against the triangles of the other. `None` when neither part has
/// faces.
pub fn pair_separation(scene: &Scene, pair: &PartPair) -> Result<Option<Separation>> {
    pair_separation_with(scene, &scene_normals(scene), pair)
}

/// One frozen correspondence per pair, in pair order.
pub(crate) fn separations(scene: &Scene, pairs: &PartPairSet) -> Result<Vec<Option<Separation>>> {
    let normals = scene_normals(scene);
    pairs.iter().map(|p| pair_separation_with(scene, &normals, p)).collect()
}

/// Smallest signed separation over all pairs.
pub fn min_separation(scene: &Scene, pairs: &PartPairSet) -> Result<Option<f64>> {
    Ok(separations(scene, pairs)?
        .into_iter()
        .flatten()
        .map(|s| s.distance)
        .reduce(f64::min))
}

fn barrier(distance: f64, tol: f64) -> f64 {
    let t = penetration_temperature(tol);
    t * softplus((tol - distance) / t)
}

/// Mean softplus barrier over pairs; 0 when `pairs` is empty.
pub fn interpenetration_loss(scene: &Scene, pairs: &PartPairSet, tol: f64) -> Result<f64> {
    if pairs.is_empty() {
        warn!("interpenetration loss evaluated with no part pairs");
        return Ok(0.0);
    }
    let seps = separations(scene, pairs)?;
    Ok(seps
        .iter()
        .map(|s| s.as_ref().map_or(0.0, |s| barrier(s.distance, tol)))
        .sum::<f64>()
        / pairs.len() as f64)
}

/// Fitting-stage variant: `gamma ·` the barrier loss at tolerance `tol`.
pub fn fitting_interpenetration_loss(scene: &Scene, pairs: &PartPairSet, tol: f64, gamma: f64) -> Result<f64> {
    Ok(gamma * interpenetration_loss(scene, pairs, tol)?)
}

/// Barrier loss and vertex gradients with the correspondences held fixed.
pub(crate) fn frozen_penetration(
    meshes: &[&Mesh],
    seps: &[Option<Separation>],
    tol: f64,
    grads: &mut [Vec<Vec3>],
    weight: f64,
) -> f64 {
    if seps.is_empty() {
        return 0.0;
    }
    let t = penetration_temperature(tol);
    let scale = 1.0 / seps.len() as f64;
    let mut loss = 0.0;
    for s in seps.iter().flatten() {
        let (vm, vi) = s.vertex;
        let (fm, f) = s.face;
        let p = meshes[vm].vertices()[vi];
        let c: Vec3 = (0..3).map(|k| meshes[fm].vertices()[f[k] as usize] * s.bary[k]).sum();
        let r = p - c;
        let len = r.norm();
        let d = s.sign * len;
        let x = (tol - d) / t;
        loss += t * softplus(x);
        let dl_dd = -sigmoid(x) * scale * weight;
        let dir = if len > 1e-12 { r * (s.sign / len) } else { s.normal };
        grads[vm][vi] += dir * dl_dd;
        for k in 0..3 {
            grads[fm][f[k] as usize] -= dir * (dl_dd * s.bary[k]);
        }
    }
    loss * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn cube(center: Vec3, half: f64, id: u32) -> Mesh {
        let mut v = Vec::new();
        for i in 0..8 {
            let s = |b: usize| if i >> b & 1 == 1 { half } else { -half };
            v.push(center + Vec3::new(s(0), s(1), s(2)));
        }
        let f = vec![
            [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
            [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
        ];
        Mesh::new(v, f, id).unwrap().with_part_labels(vec![0; 8]).unwrap()
    }

    #[test]
    fn far_instances_have_no_pairs() {
        let s = Scene::new(vec![cube(Vec3::zeros(), 0.1, 1), cube(Vec3::new(1.0, 0.0, 0.0), 0.1, 2)]).unwrap();
        assert!(contact_pairs_from_meshes(&s, 0.05).unwrap().is_empty());
    }

    #[test]
    fn touching_cubes_give_one_pair() {
        let s = Scene::new(vec![cube(Vec3::zeros(), 0.5, 1), cube(Vec3::new(1.0, 0.0, 0.0), 0.5, 2)]).unwrap();
        let pairs = contact_pairs_from_meshes(&s, 0.05).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(*pairs.iter().next().unwrap(), PartPair::new(1, 0, 2, 0).unwrap());
    }

    #[test]
    fn missing_labels_is_an_error() {
        let m = cube(Vec3::zeros(), 0.5, 1);
        let bare = Mesh::new(m.vertices().to_vec(), m.faces().to_vec(), 1).unwrap();
        assert!(contact_pairs_from_meshes(&Scene::new(vec![bare]).unwrap(), 0.1).is_err());
    }

    #[test]
    fn closed_form_barrier_values() {
        let tol = 5e-4;
        let t = penetration_temperature(tol);
        assert_eq!(t, 1.25e-4);
        assert!((barrier(tol, tol) - t * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(barrier(0.1, tol) < 1e-30);
        let expected = 1.25e-4 * (1.0 + 4f64.exp()).ln();
        assert!((barrier(0.0, tol) - expected).abs() < 1e-15);
        assert!((expected - 5.02e-4).abs() < 1e-6);
        let fit = FITTING_GAMMA * barrier(FITTING_TOL, FITTING_TOL);
        assert!((fit - 15.0 * 0.005 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((fit - 0.05199).abs() < 1e-5);
    }

    #[test]
    fn separation_sign_and_value() {
        let pair = PartPair::new(1, 0, 2, 0).unwrap();
        let apart = Scene::new(vec![cube(Vec3::zeros(), 0.5, 1), cube(Vec3::new(1.3, 0.0, 0.0), 0.5, 2)]).unwrap();
        assert!((pair_separation(&apart, &pair).unwrap().unwrap().distance - 0.3).abs() < 1e-12);
        let overlap = Scene::new(vec![cube(Vec3::zeros(), 0.5, 1), cube(Vec3::new(1.1, 0.0, 0.0), 0.7, 2)]).unwrap();
        let s = pair_separation(&overlap, &pair).unwrap().unwrap();
        assert!((s.distance + 0.1).abs() < 1e-12, "{}", s.distance);
    }

    proptest! {
        #[test]
        fn loss_is_monotone_in_separation(a in 0.0f64..0.5, b in 0.0f64..0.5) {
            let pairs: PartPairSet = [PartPair::new(1, 0, 2, 0).unwrap()].into();
            let at = |gap: f64| {
                let s = Scene::new(vec![cube(Vec3::zeros(), 0.5, 1), cube(Vec3::new(1.2 + gap - 0.05, 0.0, 0.0), 0.7, 2)]).unwrap();
                interpenetration_loss(&s, &pairs, 0.01).unwrap()
            };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(at(hi) <= at(lo));
        }
    }
}
