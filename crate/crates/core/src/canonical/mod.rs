//! Canonical unit-cube space, the fixed six-camera orthographic rig and
//! occlusion-mask synthesis.

mod masks;
mod normalize;
mod rig;

pub use masks::{dilate_mask, silhouette_templates, simulate_occlusion_mask, MaskKind};
pub use normalize::{normalize_scene, normalize_scene_jittered, Normalization, DEFAULT_PADDING};
pub use rig::{build_rig, look_at, CanonicalRig, RigView, RIG_AZIMUTHS, RIG_DISTANCE};
