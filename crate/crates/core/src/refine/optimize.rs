use std::collections::BTreeMap;

use log::debug;
use rayon::prelude::*;
use serde::Serialize;

use super::contact::{frozen_penetration, separations, Separation};
use super::losses::{adaptive_vertex_lr_with, cosine_term, visibility_from_ids};
use super::{NormalTargets, OptimizationConfig, PartPairSet};
use crate::canonical::CanonicalRig;
use crate::diffrender::Coverage;
use crate::error::{GeomError, Result};
use crate::math::Vec3;
use crate::mesh::{Mesh, Scene};
use crate::optim::Adam;
use crate::render::PartMasks;

const VIS_EPS: f64 = 1e-6;

/// Everything the refinement is supervised by, in canonical rig space.
#[derive(Debug, Clone, Copy)]
pub struct RefineProblem<'a> {
    pub targets: &'a NormalTargets,
    /// Ground-truth part visibility per rig view.
    pub gt_visibility: &'a BTreeMap<usize, PartMasks>,
    pub pairs: &'a PartPairSet,
    pub rig: &'a CanonicalRig,
    /// Joint positions per instance id; instances without joints use the
    /// base learning rate.
    pub joints: &'a BTreeMap<u32, Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    pub normal: f64,
    pub vis: f64,
    pub pen: f64,
    pub total: f64,
    /// Smallest signed part separation, when any pair has a correspondence.
    pub min_separation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub scene: Scene,
    /// Terms before each update; entry 0 is the input scene.
    pub trace: Vec<LossTerms>,
    pub best_iteration: usize,
    /// Iteration at which every vertex gradient fell below `grad_tol`; later
    /// trace entries repeat the converged terms.
    pub converged_at: Option<usize>,
    /// Largest distance any vertex reached from its input position over all
    /// iterates, not only the returned one.
    pub max_displacement: f64,
}

impl OptimizeResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,L_normal,L_vis,L_pen,L_total\n");
        for (i, t) in self.trace.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{},{}\n", t.normal, t.vis, t.pen, t.total));
        }
        s
    }
}

fn uses_normals(config: &OptimizationConfig) -> bool {
    config.lambda_group > 0.0 || config.lambda_inst > 0.0
}

/// Rasterization coverage per view and penetration correspondences, held
/// fixed while gradients are taken.
#[derive(Debug, Clone)]
pub struct FrozenState {
    group: BTreeMap<usize, Coverage>,
    instance: BTreeMap<(usize, u32), Coverage>,
    separations: Vec<Option<Separation>>,
}

fn mesh_index(scene: &Scene, id: u32) -> Result<usize> {
    scene
        .instances()
        .iter()
        .position(|m| m.instance_id() == id)
        .ok_or_else(|| GeomError::InvalidScene(format!("target for unknown instance {id}")))
}

fn view_camera(rig: &CanonicalRig, view: usize) -> Result<&crate::camera::Camera> {
    rig.camera(view)
        .ok_or_else(|| GeomError::InvalidParameter(format!("rig has no view {view}")))
}

impl FrozenState {
    pub fn capture(scene: &Scene, problem: &RefineProblem, config: &OptimizationConfig) -> Result<Self> {
        let meshes: Vec<&Mesh> = scene.instances().iter().collect();
        let mut views: Vec<usize> = problem.gt_visibility.keys().copied().collect();
        if config.lambda_group > 0.0 {
            views.extend(problem.targets.group.keys());
        }
        views.sort_unstable();
        views.dedup();
        let group = views
            .par_iter()
            .map(|&v| Ok((v, Coverage::capture(&meshes, view_camera(problem.rig, v)?))))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let instance = if config.lambda_inst > 0.0 {
            let keys: Vec<(usize, u32)> = problem.targets.instance.keys().copied().collect();
            keys.par_iter()
                .map(|&(v, k)| {
                    let m = &scene.instances()[mesh_index(scene, k)?];
                    Ok(((v, k), Coverage::capture(&[m], view_camera(problem.rig, v)?)))
                })
                .collect::<Result<BTreeMap<_, _>>>()?
        } else {
            BTreeMap::new()
        };
        let separations = if problem.pairs.is_empty() {
            Vec::new()
        } else {
            separations(scene, problem.pairs)?
        };
        Ok(Self {
            group,
            instance,
            separations,
        })
    }

    /// Loss terms and per-instance vertex gradients of the total loss for the
    /// current positions of `scene` under the frozen state.
    pub fn evaluate(
        &self,
        scene: &Scene,
        problem: &RefineProblem,
        config: &OptimizationConfig,
    ) -> Result<(LossTerms, Vec<Vec<Vec3>>)> {
        let meshes: Vec<&Mesh> = scene.instances().iter().collect();
        let mut grads: Vec<Vec<Vec3>> = meshes.iter().map(|m| vec![Vec3::zeros(); m.vertices().len()]).collect();

        let mut normal = 0.0;
        if uses_normals(config) {
            let mut any = false;
            let group: Vec<(f64, Vec<Vec<Vec3>>)> = if config.lambda_group > 0.0 {
                problem
                    .targets
                    .group
                    .par_iter()
                    .map(|(v, target)| {
                        let cam = view_camera(problem.rig, *v)?;
                        let cov = &self.group[v];
                        let shaded = cov.shade(&meshes, cam);
                        let mut g = vec![Vec3::zeros(); shaded.normal.len()];
                        Ok(match cosine_term(&shaded.normal, target, config.lambda_group, Some(&mut g)) {
                            Some(l) => (l, cov.backward(&meshes, cam, None, Some(&g))),
                            None => (f64::NAN, Vec::new()),
                        })
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            for (l, g) in group {
                if l.is_nan() && g.is_empty() {
                    continue;
                }
                any = true;
                normal += config.lambda_group * l;
                for (acc, gm) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.iter_mut().zip(gm) {
                        *a += b;
                    }
                }
            }
            let inst: Vec<(usize, f64, Vec<Vec3>)> = if config.lambda_inst > 0.0 {
                problem
                    .targets
                    .instance
                    .par_iter()
                    .map(|(&(v, k), target)| {
                        let cam = view_camera(problem.rig, v)?;
                        let pos = mesh_index(scene, k)?;
                        let one = [meshes[pos]];
                        let cov = &self.instance[&(v, k)];
                        let shaded = cov.shade(&one, cam);
                        let mut g = vec![Vec3::zeros(); shaded.normal.len()];
                        Ok(match cosine_term(&shaded.normal, target, config.lambda_inst, Some(&mut g)) {
                            Some(l) => (pos, l, cov.backward(&one, cam, None, Some(&g)).remove(0)),
                            None => (pos, f64::NAN, Vec::new()),
                        })
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            for (pos, l, g) in inst {
                if l.is_nan() && g.is_empty() {
                    continue;
                }
                any = true;
                normal += config.lambda_inst * l;
                for (a, b) in grads[pos].iter_mut().zip(g) {
                    *a += b;
                }
            }
            if !any {
                return Err(GeomError::Empty("no view overlaps its normal target".into()));
            }
        }

        let mut vis = 0.0;
        for (v, masks) in problem.gt_visibility {
            let cov = &self.group[v];
            vis += visibility_from_ids(
                |i| cov.owner_at(i).map(|o| meshes[o].instance_id()),
                masks,
                VIS_EPS,
            )?;
        }

        let pen = frozen_penetration(&meshes, &self.separations, config.tol, &mut grads, config.lambda_pen);
        let min_separation = self.separations.iter().flatten().map(|s| s.distance).reduce(f64::min);

        for (term, value) in [("L_normal", normal), ("L_vis", vis), ("L_pen", pen)] {
            if !value.is_finite() {
                return Err(GeomError::NonFinite {
                    term: term.into(),
                    detail: format!("value {value}"),
                });
            }
        }
        if grads.iter().flatten().any(|g| !g.iter().all(|c| c.is_finite())) {
            return Err(GeomError::NonFinite {
                term: "gradient".into(),
                detail: "non-finite vertex gradient".into(),
            });
        }
        let total = normal + config.lambda_vis * vis + config.lambda_pen * pen;
        Ok((
            LossTerms {
                normal,
                vis,
                pen,
                total,
                min_separation,
            },
            grads,
        ))
    }
}

/// Lazy Adam with per-vertex moments over all instance vertices against `L_normal + λ_vis·L_vis +
/// λ_pen·L_pen`, recomputing coverage and correspondences every step.
/// Returns the iterate with the lowest total loss.
pub fn optimize(scene: &Scene, problem: &RefineProblem, config: &OptimizationConfig) -> Result<OptimizeResult> {
    config.validate()?;
    problem.rig.validate()?;
    if config.lambda_group > 0.0 {
        problem.targets.validate(problem.rig.views.len())?;
    }
    for (v, t) in problem.targets.group.iter().map(|(v, t)| (*v, t)).chain(
        problem.targets.instance.iter().map(|((v, _), t)| (*v, t)),
    ) {
        let cam = view_camera(problem.rig, v)?;
        if t.width() != cam.width || t.height() != cam.height || t.channels() != 3 {
            return Err(GeomError::ShapeMismatch(format!("normal target for view {v}")));
        }
    }
    for k in problem.targets.instance.keys().map(|&(_, k)| k) {
        mesh_index(scene, k)?;
    }

    let mut lr = Vec::with_capacity(scene.vertex_count());
    for m in scene.instances() {
        match problem.joints.get(&m.instance_id()) {
            Some(j) if config.adaptive_lr && !j.is_empty() => {
                lr.extend(adaptive_vertex_lr_with(m, j, config.base_lr, config.lr_sigmoid)?)
            }
            _ => lr.extend(std::iter::repeat_n(config.base_lr, m.vertices().len())),
        }
    }
    let counts: Vec<usize> = scene.instances().iter().map(|m| m.vertices().len()).collect();
    let mut params: Vec<Vec3> = scene.instances().iter().flat_map(|m| m.vertices().to_vec()).collect();
    let start = params.clone();
    let mut max_displacement: f64 = 0.0;
    let mut opt = Adam::new(lr).lazy().per_vertex();
    let mut current = scene.clone();
    let mut best: Option<(f64, Scene, usize)> = None;
    let mut trace = Vec::with_capacity(config.iters + 1);
    let mut converged_at = None;

    for it in 0..=config.iters {
        let frozen = FrozenState::capture(&current, problem, config)?;
        let (terms, grads) = frozen.evaluate(&current, problem, config)?;
        trace.push(terms);
        if best.as_ref().is_none_or(|b| terms.total < b.0) {
            best = Some((terms.total, current.clone(), it));
        }
        if it == config.iters {
            break;
        }
        let flat: Vec<Vec3> = grads.into_iter().flatten().collect();
        if flat.iter().all(|g| g.norm() <= config.grad_tol) {
            // the scene no longer changes, so every later evaluation repeats
            trace.resize(config.iters + 1, terms);
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
        let split = counts
            .iter()
            .map(|&c| {
                let v = params[off..off + c].to_vec();
                off += c;
                v
            })
            .collect();
        current = current.with_vertices(split).map_err(|e| GeomError::NonFinite {
            term: "update".into(),
            detail: e.to_string(),
        })?;
    }
    let (loss, scene, best_iteration) = best.unwrap();
    debug!(
        "refinement: total {:.6} -> {:.6} (best at {best_iteration})",
        trace[0].total, loss
    );
    Ok(OptimizeResult {
        scene,
        trace,
        best_iteration,
        converged_at,
        max_displacement,
    })
}
