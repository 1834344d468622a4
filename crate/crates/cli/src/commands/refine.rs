use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hug_geom::io;
use hug_geom::refine::{contact_pairs_from_meshes, optimize, RefineProblem, DEFAULT_CONTACT_RADIUS};

use crate::config::{existing, optional, PipelineConfig};
use crate::layout::{self, MESH_DIR, TRACE_FILE};

/// Refine the initial meshes against multi-view normal targets with
/// interpenetration and visibility terms.
#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Directory of initial meshes.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Directory of per-view normal targets.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Rig cameras; defaults to rig.json beside the targets.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Defaults to normalization.json beside the targets.
    #[arg(long)]
    pub normalization: Option<PathBuf>,
    #[arg(long)]
    pub joints: Option<PathBuf>,
    /// Part pairs JSON for the penetration term.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub lambda_group: Option<f64>,
    #[arg(long)]
    pub lambda_inst: Option<f64>,
    #[arg(long)]
    pub lambda_pen: Option<f64>,
    #[arg(long)]
    pub lambda_vis: Option<f64>,
    /// Penetration tolerance in meters.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Without a pairs file, parts closer than this (meters) are paired for
    /// the penetration term.
    #[arg(long, default_value_t = DEFAULT_CONTACT_RADIUS)]
    pub contact_radius: f64,
}

pub fn run(args: &RefineArgs, cfg: &PipelineConfig) -> Result<()> {
    let p = &cfg.paths;
    let init_path = existing(&args.init, &p.init, "init")?;
    let targets_path = existing(&args.targets, &p.targets, "targets")?;
    let (sib_rig, sib_norm) = layout::sibling_rig_files(&targets_path);
    let rig_path = optional(&args.rig, &p.rig, "rig")?.or(sib_rig);
    let norm_path = optional(&args.normalization, &p.normalization, "normalization")?.or(sib_norm);
    let joints_path = optional(&args.joints, &p.joints, "joints")?;
    let pairs_path = optional(&args.pairs, &p.pairs, "pairs")?;

    let mut config = cfg.optimization.clone();
    let overrides = [
        (&mut config.base_lr, args.base_lr),
        (&mut config.lambda_group, args.lambda_group),
        (&mut config.lambda_inst, args.lambda_inst),
        (&mut config.lambda_pen, args.lambda_pen),
        (&mut config.lambda_vis, args.lambda_vis),
        (&mut config.tol, args.tol),
    ];
    for (slot, flag) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(n) = args.iters {
        config.iters = n;
    }
    config.validate()?;

    let scene = layout::read_scene(&init_path)?;
    let rig = layout::load_rig(
        rig_path.as_deref(),
        norm_path.as_deref(),
        &scene,
        (cfg.rig.width, cfg.rig.height),
        cfg.rig.padding,
    )?
    .in_world()?;
    let ids: Vec<u32> = scene.instances().iter().map(|m| m.instance_id()).collect();
    let (targets, gt_visibility) = layout::read_targets(&targets_path, &rig, &ids)?;
    let joints = match &joints_path {
        Some(j) => layout::read_joints(j)?,
        None => BTreeMap::new(),
    };
    let pairs = match &pairs_path {
        Some(p) => layout::read_pairs(p)?,
        None => contact_pairs_from_meshes(&scene, args.contact_radius)?,
    };

    let problem = RefineProblem {
        targets: &targets,
        gt_visibility: &gt_visibility,
        pairs: &pairs,
        rig: &rig,
        joints: &joints,
    };
    let result = optimize(&scene, &problem, &config)?;
    layout::write_scene(&args.out.join(MESH_DIR), &result.scene)?;
    io::write_atomic(&args.out.join(TRACE_FILE), result.trace_csv().as_bytes())?;

    let (first, best) = (&result.trace[0], &result.trace[result.best_iteration]);
    println!(
        "refine: {} part pairs, {} iterations, L_total {:.6} -> {:.6} (best at {})",
        pairs.len(),
        config.iters,
        first.total,
        best.total,
        result.best_iteration
    );
    if let (Some(a), Some(b)) = (first.min_separation, best.min_separation) {
        println!("refine: min part separation {:.4} m -> {:.4} m", a, b);
    }
    Ok(())
}
