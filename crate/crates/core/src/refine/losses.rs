use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::NormalTargets;
use crate::error::{GeomError, Result};
use crate::image::ImageBuffer;
use crate::math::{sigmoid, Vec2, Vec3};
use crate::mesh::Mesh;
use crate::render::{PartMasks, RenderOutput};
use crate::spatial::KdTree;

/// Incorrectly occluded pixel ratio averaged over parts:
/// `1/(2B) · Σ_k Σ_b E/(M + eps)` where `E` counts ground-truth visible pixels
/// of part `b` of instance `k` covered by another instance.
pub fn visibility_loss(render: &RenderOutput, gt_part_visibility: &PartMasks, eps: f64) -> Result<f64> {
    let ids = &render.instance_map;
    for m in gt_part_visibility.values() {
        if !m.same_size(ids) {
            return Err(GeomError::ShapeMismatch("visibility mask does not match render".into()));
        }
    }
    visibility_from_ids(|i| Some(ids.at(i) as u32).filter(|&v| v != 0), gt_part_visibility, eps)
}

pub(crate) fn visibility_from_ids(
    instance_at: impl Fn(usize) -> Option<u32>,
    gt: &PartMasks,
    eps: f64,
) -> Result<f64> {
    let parts: BTreeSet<u32> = gt.keys().map(|&(_, b)| b).collect();
    if parts.is_empty() {
        return Err(GeomError::Empty("no part visibility masks".into()));
    }
    let b = parts.len() as f64;
    let mut sum = 0.0;
    for (&(k, _), mask) in gt {
        let (mut e, mut m) = (0usize, 0usize);
        for i in 0..mask.len() {
            if mask.at(i) != 0.0 {
                m += 1;
                if instance_at(i).is_some_and(|id| id != k) {
                    e += 1;
                }
            }
        }
        sum += e as f64 / (m as f64 + eps);
    }
    Ok(sum / (2.0 * b))
}

/// Mean of `1 − ⟨target, rendered⟩` over pixels set in both; writes
/// `d/d rendered` scaled by `weight` into `grad` when given.
pub(crate) fn cosine_term(
    rendered: &[Vec3],
    target: &ImageBuffer,
    weight: f64,
    grad: Option<&mut [Vec3]>,
) -> Option<f64> {
    let shared: Vec<usize> = (0..rendered.len())
        .filter(|&i| rendered[i] != Vec3::zeros() && target.at3(i) != Vec3::zeros())
        .collect();
    if shared.is_empty() {
        return None;
    }
    let n = shared.len() as f64;
    let loss = shared
        .iter()
        .map(|&i| 1.0 - target.at3(i).dot(&rendered[i]))
        .sum::<f64>()
        / n;
    if let Some(g) = grad {
        for &i in &shared {
            g[i] -= target.at3(i) * (weight / n);
        }
    }
    Some(loss)
}

fn buffer_normals(b: &ImageBuffer) -> Vec<Vec3> {
    (0..b.len()).map(|i| b.at3(i)).collect()
}

/// `λ_g · Σ_views mean(1 − cos) + λ_i · Σ_views Σ_instances mean(1 − cos)`,
/// each mean taken over pixels foreground in both render and target.
pub fn normal_supervision_loss(
    render_group: &BTreeMap<usize, ImageBuffer>,
    render_instances: &BTreeMap<(usize, u32), ImageBuffer>,
    targets: &NormalTargets,
    lambda_group: f64,
    lambda_inst: f64,
) -> Result<f64> {
    let mut any = false;
    let mut total = 0.0;
    for (view, target) in &targets.group {
        if let Some(r) = render_group.get(view) {
            if !r.same_size(target) {
                return Err(GeomError::ShapeMismatch(format!("group view {view}")));
            }
            if let Some(l) = cosine_term(&buffer_normals(r), target, 1.0, None) {
                total += lambda_group * l;
                any = true;
            }
        }
    }
    for (key, target) in &targets.instance {
        if let Some(r) = render_instances.get(key) {
            if !r.same_size(target) {
                return Err(GeomError::ShapeMismatch(format!("instance view {key:?}")));
            }
            if let Some(l) = cosine_term(&buffer_normals(r), target, 1.0, None) {
                total += lambda_inst * l;
                any = true;
            }
        }
    }
    if !any {
        return Err(GeomError::Empty("no view overlaps its normal target".into()));
    }
    Ok(total)
}

/// Which sigmoid maps joint distance to a learning-rate factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSigmoid {
    /// `σ(200·d − 10)`: slow near joints, half rate at 5 cm.
    #[default]
    Increasing,
    /// `σ(200·d + 10)`, effectively constant for `d ≥ 0`.
    Printed,
}

/// Per-vertex learning rates `base_lr · σ(200·d − 10)` with `d` the distance
/// to the nearest joint.
pub fn adaptive_vertex_lr(mesh: &Mesh, joints: &[Vec3], base_lr: f64) -> Result<Vec<f64>> {
    adaptive_vertex_lr_with(mesh, joints, base_lr, LrSigmoid::Increasing)
}

pub fn adaptive_vertex_lr_with(
    mesh: &Mesh,
    joints: &[Vec3],
    base_lr: f64,
    form: LrSigmoid,
) -> Result<Vec<f64>> {
    if joints.is_empty() {
        return Err(GeomError::InvalidParameter("adaptive learning rate needs joints".into()));
    }
    let offset = match form {
        LrSigmoid::Increasing => -10.0,
        LrSigmoid::Printed => 10.0,
    };
    let tree = KdTree::new(joints);
    Ok(mesh
        .vertices()
        .iter()
        .map(|v| {
            let (_, d2) = tree.nearest(v).unwrap();
            base_lr * sigmoid(200.0 * d2.sqrt() + offset)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointWeights {
    pub gamma_std: f64,
    pub gamma_vis: f64,
    pub alpha_occ: f64,
}

impl Default for KeypointWeights {
    fn default() -> Self {
        Self {
            gamma_std: 0.5,
            gamma_vis: 0.5,
            alpha_occ: 0.1,
        }
    }
}

/// `γ_std · mean|e|² + γ_vis · mean(w·|e|²)` with `w = 1` for visible joints
/// and `alpha_occ` for occluded ones.
pub fn keypoint_loss(
    projected: &[Vec2],
    observed: &[Vec2],
    visible: &[bool],
    weights: &KeypointWeights,
) -> Result<f64> {
    if projected.len() != observed.len() || projected.len() != visible.len() {
        return Err(GeomError::ShapeMismatch(format!(
            "{} projected, {} observed, {} visibility flags",
            projected.len(),
            observed.len(),
            visible.len()
        )));
    }
    if projected.is_empty() {
        return Err(GeomError::Empty("no keypoints".into()));
    }
    let n = projected.len() as f64;
    let (mut l_std, mut l_vis) = (0.0, 0.0);
    for ((p, o), &vis) in projected.iter().zip(observed).zip(visible) {
        let e = (p - o).norm_squared();
        l_std += e;
        l_vis += if vis { e } else { weights.alpha_occ * e };
    }
    Ok(weights.gamma_std * l_std / n + weights.gamma_vis * l_vis / n)
}
