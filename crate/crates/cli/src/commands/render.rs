use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hug_geom::io;
use hug_geom::{rasterize, RasterOptions};

use crate::config::{optional, PipelineConfig};
use crate::layout::{self, view_dir};

/// Rasterize meshes from one camera or from every rig view.
#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Directory of meshes.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Single camera JSON; output goes straight into --out.
    #[arg(long, conflicts_with_all = ["rig", "normalization"])]
    pub camera: Option<PathBuf>,
    /// Rig JSON; without it a default rig fitted to the meshes is used.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[arg(long)]
    pub normalization: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Default rig resolution (square).
    #[arg(long)]
    pub size: Option<usize>,
}

pub fn run(args: &RenderArgs, cfg: &PipelineConfig) -> Result<()> {
    let scene = layout::read_scene(&args.mesh)?;
    let options = RasterOptions {
        render_rgb: scene.instances().iter().all(|m| m.vertex_colors().is_some()),
        ..Default::default()
    };
    if let Some(cam_path) = &args.camera {
        let camera = io::read_camera(cam_path)?;
        io::write_render(&args.out, &rasterize(&scene, &camera, &options)?)?;
        println!("render: 1 view written to {}", args.out.display());
        return Ok(());
    }
    let rig_path = optional(&args.rig, &cfg.paths.rig, "rig")?;
    let norm_path = optional(&args.normalization, &cfg.paths.normalization, "normalization")?;
    let size = args.size.map_or((cfg.rig.width, cfg.rig.height), |s| (s, s));
    let rig = layout::load_rig(rig_path.as_deref(), norm_path.as_deref(), &scene, size, cfg.rig.padding)?;
    layout::write_rig_files(&args.out, &rig)?;
    for view in &rig.in_world()?.views {
        let out = rasterize(&scene, &view.camera, &options)?;
        io::write_render(&view_dir(&args.out, view.azimuth_deg), &out)?;
    }
    println!("render: {} views written to {}", rig.views.len(), args.out.display());
    Ok(())
}
