//! Pipeline configuration file. Every field is optional; command-line flags
//! take precedence over values read here. Relative paths are resolved against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use hug_geom::canonical::{DEFAULT_PADDING, RIG_DISTANCE};
use hug_geom::metrics::ChamferReduction;
use hug_geom::refine::OptimizationConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input_rgb: Option<PathBuf>,
    pub input_camera: Option<PathBuf>,
    pub input_depth: Option<PathBuf>,
    pub input_normal: Option<PathBuf>,
    /// Directory of initial (body-model) meshes.
    pub init: Option<PathBuf>,
    /// Directory of predicted multi-view normal and RGB targets.
    pub targets: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub joints: Option<PathBuf>,
    /// Part pairs for the penetration term; computed from the meshes when absent.
    pub pairs: Option<PathBuf>,
    pub rig: Option<PathBuf>,
    pub normalization: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub width: usize,
    pub height: usize,
    pub distance: f64,
    pub padding: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            distance: RIG_DISTANCE,
            padding: DEFAULT_PADDING,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Pers2OrthoConfig {
    pub tau: f64,
    pub erode_kernel: usize,
    pub dilate_kernel: usize,
    /// Geometry refinement steps against the input depth/normal (0 skips it).
    pub partial_iters: usize,
    pub partial_lr: f64,
}

impl Default for Pers2OrthoConfig {
    fn default() -> Self {
        use hug_geom::pers2ortho::*;
        Self {
            tau: DEFAULT_TAU,
            erode_kernel: DEFAULT_ERODE,
            dilate_kernel: DEFAULT_EDGE_DILATE,
            partial_iters: 0,
            partial_lr: DEFAULT_GEO_LR,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureConfig {
    pub dilate_kernel: usize,
    pub debug: bool,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            dilate_kernel: hug_geom::texture::DEFAULT_CONFIDENCE_DILATE,
            debug: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChamferMode {
    Sum,
    Mean,
}

impl From<ChamferMode> for ChamferReduction {
    fn from(m: ChamferMode) -> Self {
        match m {
            ChamferMode::Sum => ChamferReduction::Sum,
            ChamferMode::Mean => ChamferReduction::Mean,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub fscore_tau_cm: f64,
    pub contact_delta: f64,
    pub chamfer: ChamferMode,
    pub p2s_squared: bool,
    /// Side length of the evaluation renders.
    pub render_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        use hug_geom::metrics::*;
        Self {
            samples: DEFAULT_SAMPLES,
            fscore_tau_cm: DEFAULT_FSCORE_TAU_CM,
            contact_delta: DEFAULT_CONTACT_DELTA,
            chamfer: ChamferMode::Sum,
            p2s_squared: false,
            render_size: 256,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub optimization: OptimizationConfig,
    pub rig: RigConfig,
    pub pers2ortho: Pers2OrthoConfig,
    pub texture: TextureConfig,
    pub evaluate: EvalConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.input_rgb,
            &mut p.input_camera,
            &mut p.input_depth,
            &mut p.input_normal,
            &mut p.init,
            &mut p.targets,
            &mut p.gt,
            &mut p.joints,
            &mut p.pairs,
            &mut p.rig,
            &mut p.normalization,
        ] {
            if let Some(rel) = slot.as_mut().filter(|p| p.is_relative()) {
                *rel = base.join(&*rel);
            }
        }
        cfg.optimization
            .validate()
            .map_err(|e| CliError::Input(format!("bad config {}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// Flag value if given, else the config value; the result must name an
/// existing file or directory.
pub fn existing(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = flag
        .clone()
        .or_else(|| config.clone())
        .ok_or_else(|| CliError::Input(format!("no {name} given (pass --{name} or set paths in the config)")))?;
    if !path.exists() {
        return Err(CliError::Input(format!("{name} not found: {}", path.display())));
    }
    Ok(path)
}

/// Like [`existing`] but the path may be absent altogether.
pub fn optional(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<Option<PathBuf>, CliError> {
    match flag.clone().or_else(|| config.clone()) {
        None => Ok(None),
        Some(p) if p.exists() => Ok(Some(p)),
        Some(p) => Err(CliError::Input(format!("{name} not found: {}", p.display()))),
    }
}
