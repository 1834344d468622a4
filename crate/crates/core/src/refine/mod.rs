//! Multi-instance mesh refinement against multi-view normal targets with
//! interpenetration and visibility terms, plus the fitting-stage losses.

mod contact;
mod losses;
mod optimize;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::image::ImageBuffer;

pub use contact::{
    contact_pairs_from_meshes, fitting_interpenetration_loss, interpenetration_loss,
    min_separation, pair_separation, penetration_temperature, Separation, DEFAULT_CONTACT_RADIUS,
    FITTING_GAMMA, FITTING_TOL,
};
pub use losses::{
    adaptive_vertex_lr, adaptive_vertex_lr_with, keypoint_loss, normal_supervision_loss,
    visibility_loss, KeypointWeights, LrSigmoid,
};
pub use optimize::{optimize, FrozenState, LossTerms, OptimizeResult, RefineProblem};

/// Loss weights and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub lambda_group: f64,
    pub lambda_inst: f64,
    pub lambda_pen: f64,
    pub lambda_vis: f64,
    /// Penetration tolerance in meters.
    pub tol: f64,
    pub iters: usize,
    pub base_lr: f64,
    /// Lower learning rates near joints when joint positions are supplied.
    pub adaptive_lr: bool,
    pub lr_sigmoid: LrSigmoid,
    /// The run stops once no vertex gradient is longer than this. Adam's
    /// normalised steps would otherwise turn roundoff-level gradients at a
    /// converged solution into full learning-rate steps.
    pub grad_tol: f64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            lambda_group: 1.0,
            lambda_inst: 0.2,
            lambda_pen: 30.0,
            lambda_vis: 1.0,
            tol: 5e-4,
            iters: 200,
            base_lr: 0.01,
            adaptive_lr: true,
            lr_sigmoid: LrSigmoid::default(),
            grad_tol: 1e-12,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_group", self.lambda_group),
            ("lambda_inst", self.lambda_inst),
            ("lambda_pen", self.lambda_pen),
            ("lambda_vis", self.lambda_vis),
            ("base_lr", self.base_lr),
            ("grad_tol", self.grad_tol),
        ];
        for (name, w) in weights {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(GeomError::InvalidParameter(format!("{name} must be >= 0, got {w}")));
            }
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(GeomError::InvalidParameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.iters == 0 {
            return Err(GeomError::InvalidParameter("iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Two body parts eligible for penetration penalties, stored with
/// `(instance_a, part_a) < (instance_b, part_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartPair {
    pub instance_a: u32,
    pub part_a: u32,
    pub instance_b: u32,
    pub part_b: u32,
}

impl PartPair {
    /// Canonical ordering; `None` for a part paired with itself.
    pub fn new(instance_a: u32, part_a: u32, instance_b: u32, part_b: u32) -> Option<Self> {
        let (x, y) = ((instance_a, part_a), (instance_b, part_b));
        if x == y {
            return None;
        }
        let (lo, hi) = if x < y { (x, y) } else { (y, x) };
        Some(Self {
            instance_a: lo.0,
            part_a: lo.1,
            instance_b: hi.0,
            part_b: hi.1,
        })
    }
}

pub type PartPairSet = BTreeSet<PartPair>;

/// Predicted camera-space normals per rig view, for the whole group and for
/// single instances keyed by `(view, instance id)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalTargets {
    pub group: BTreeMap<usize, ImageBuffer>,
    pub instance: BTreeMap<(usize, u32), ImageBuffer>,
}

impl NormalTargets {
    pub fn validate(&self, views: usize) -> Result<()> {
        for v in 0..views {
            if !self.group.contains_key(&v) {
                return Err(GeomError::InvalidParameter(format!("missing group target for view {v}")));
            }
        }
        Ok(())
    }
}
