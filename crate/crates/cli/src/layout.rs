//! On-disk layout shared by the subcommands.
//!
//! ```text
//! <scene dir>/instance_{k}.ply          one mesh per instance id k
//! <views dir>/rig.json                  canonical rig cameras
//! <views dir>/normalization.json        world -> canonical cube transform
//! <views dir>/view_{azimuth}/rgb.png
//!                            mask.png
//!                            depth.pfm
//!                            normal.pfm            group normals
//!                            instance_{k}_normal.pfm
//!                            parts/instance_{k}_part_{p}.png
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hug_geom::canonical::{build_rig, CanonicalRig, Normalization, RIG_DISTANCE};
use hug_geom::io;
use hug_geom::refine::{NormalTargets, PartPairSet};
use hug_geom::render::PartMasks;
use hug_geom::{Mesh, Scene, Semantic, Vec3};

use crate::CliError;

pub const RIG_FILE: &str = "rig.json";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const MESH_DIR: &str = "mesh";

pub fn view_dir(root: &Path, azimuth_deg: f64) -> PathBuf {
    root.join(format!("view_{}", azimuth_deg.round() as i64))
}

pub fn instance_file(dir: &Path, id: u32) -> PathBuf {
    dir.join(format!("instance_{id}.ply"))
}

pub fn instance_normal_file(view: &Path, id: u32) -> PathBuf {
    view.join(format!("instance_{id}_normal.pfm"))
}

pub fn part_mask_file(view: &Path, id: u32, part: u32) -> PathBuf {
    view.join("parts").join(format!("instance_{id}_part_{part}.png"))
}

fn parse_instance_name(name: &str) -> Option<u32> {
    let stem = name.strip_suffix(".ply").or_else(|| name.strip_suffix(".obj"))?;
    stem.strip_prefix("instance_")?.parse().ok()
}

/// All `instance_{k}.ply|obj` meshes in `dir`, ordered by instance id.
pub fn read_scene(dir: &Path) -> Result<Scene> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Input(format!("cannot list {}: {e}", dir.display())))?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(parse_instance_name) {
            if files.insert(id, path.clone()).is_some() {
                return Err(CliError::Input(format!("instance {id} appears twice in {}", dir.display())).into());
            }
        }
    }
    if files.is_empty() {
        return Err(CliError::Input(format!("no instance_{{k}}.ply meshes in {}", dir.display())).into());
    }
    let meshes = files
        .into_iter()
        .map(|(id, p)| io::read_mesh(&p, id))
        .collect::<hug_geom::Result<Vec<Mesh>>>()?;
    Ok(Scene::new(meshes)?)
}

pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    for m in scene.instances() {
        io::write_mesh(&instance_file(dir, m.instance_id()), m)?;
    }
    Ok(())
}

/// Canonical rig from `rig` (or a default rig of the given size when absent)
/// with the normalization from `normalization` or fitted to `fit_to`.
pub fn load_rig(
    rig: Option<&Path>,
    normalization: Option<&Path>,
    fit_to: &Scene,
    size: (usize, usize),
    padding: f64,
) -> Result<CanonicalRig> {
    let mut out = match rig {
        Some(p) => CanonicalRig {
            views: io::read_rig(p)?,
            normalization: Normalization::default(),
        },
        None => build_rig(RIG_DISTANCE, size.0, size.1)?,
    };
    out.validate().with_context(|| "rig cameras are not a canonical rig")?;
    out.normalization = match normalization {
        Some(p) => io::read_normalization(p)?,
        None => Normalization::fit(fit_to, padding)?,
    };
    Ok(out)
}

/// Rig and normalization files stored next to a views directory, if present.
pub fn sibling_rig_files(dir: &Path) -> (Option<PathBuf>, Option<PathBuf>) {
    let existing = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
    (existing(RIG_FILE), existing(NORMALIZATION_FILE))
}

pub fn write_rig_files(dir: &Path, rig: &CanonicalRig) -> Result<()> {
    io::write_rig(&dir.join(RIG_FILE), &rig.views)?;
    io::write_normalization(&dir.join(NORMALIZATION_FILE), &rig.normalization)?;
    Ok(())
}

/// Group normal targets for every rig view plus whichever per-instance
/// targets and part visibility masks exist.
pub fn read_targets(dir: &Path, rig: &CanonicalRig, ids: &[u32]) -> Result<(NormalTargets, BTreeMap<usize, PartMasks>)> {
    let mut targets = NormalTargets::default();
    let mut visibility = BTreeMap::new();
    for (v, view) in rig.views.iter().enumerate() {
        let vd = view_dir(dir, view.azimuth_deg);
        let group = vd.join("normal.pfm");
        if !group.exists() {
            return Err(CliError::Input(format!("missing normal target {}", group.display())).into());
        }
        targets.group.insert(v, io::read_pfm(&group, Semantic::Normal)?);
        let mut masks = PartMasks::new();
        for &k in ids {
            let inst = instance_normal_file(&vd, k);
            if inst.exists() {
                targets.instance.insert((v, k), io::read_pfm(&inst, Semantic::Normal)?);
            }
            let parts = vd.join("parts");
            if parts.is_dir() {
                let prefix = format!("instance_{k}_part_");
                for entry in fs::read_dir(&parts)? {
                    let path = entry?.path();
                    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                    if let Some(p) = name.strip_prefix(&prefix).and_then(|s| s.strip_suffix(".png")) {
                        let part: u32 = p
                            .parse()
                            .map_err(|_| CliError::Input(format!("bad part mask name {}", path.display())))?;
                        masks.insert((k, part), io::read_png(&path, Semantic::Mask)?);
                    }
                }
            }
        }
        if !masks.is_empty() {
            visibility.insert(v, masks);
        }
    }
    Ok((targets, visibility))
}

/// `{"<instance id>": [[x, y, z], ...]}`.
pub fn read_joints(path: &Path) -> Result<BTreeMap<u32, Vec<Vec3>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let raw: BTreeMap<String, Vec<[f64; 3]>> =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("bad joints file {}: {e}", path.display())))?;
    raw.into_iter()
        .map(|(k, v)| {
            let id = k
                .parse()
                .map_err(|_| CliError::Input(format!("bad instance id {k:?} in {}", path.display())))?;
            Ok((id, v.into_iter().map(Vec3::from).collect()))
        })
        .collect()
}

pub fn write_joints(path: &Path, joints: &BTreeMap<u32, Vec<Vec3>>) -> Result<()> {
    let raw: BTreeMap<String, Vec<[f64; 3]>> = joints
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|p| [p.x, p.y, p.z]).collect()))
        .collect();
    io::write_atomic(path, serde_json::to_string_pretty(&raw)?.as_bytes())?;
    Ok(())
}

/// JSON array of `{instance_a, part_a, instance_b, part_b}` objects.
pub fn read_pairs(path: &Path) -> Result<PartPairSet> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| CliError::Input(format!("bad pairs file {}: {e}", path.display())))?)
}

pub fn write_pairs(path: &Path, pairs: &PartPairSet) -> Result<()> {
    io::write_atomic(path, serde_json::to_string_pretty(pairs)?.as_bytes())?;
    Ok(())
}
