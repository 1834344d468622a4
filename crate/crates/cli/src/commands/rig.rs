use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hug_geom::canonical::{build_rig, Normalization};

use crate::config::PipelineConfig;
use crate::layout;

/// Write the canonical rig cameras and a normalization.
#[derive(Debug, Args)]
pub struct RigArgs {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub distance: Option<f64>,
    /// Fit the normalization to the meshes in this directory (identity otherwise).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub padding: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &RigArgs, cfg: &PipelineConfig) -> Result<()> {
    let r = &cfg.rig;
    let rig = build_rig(
        args.distance.unwrap_or(r.distance),
        args.width.unwrap_or(r.width),
        args.height.unwrap_or(r.height),
    )?;
    let normalization = match &args.fit {
        Some(dir) => Normalization::fit(&layout::read_scene(dir)?, args.padding.unwrap_or(r.padding))?,
        None => Normalization::default(),
    };
    layout::write_rig_files(&args.out, &rig.with_normalization(normalization))?;
    println!("rig: 6 views written to {}", args.out.display());
    Ok(())
}
