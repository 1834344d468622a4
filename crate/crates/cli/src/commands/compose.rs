use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, ValueEnum};
use hug_geom::io;
use hug_geom::latent::{
    compose_instance_to_group_with, downsample_mask_to_latent, inject_partial_rgb, LatentGrid, Overlap, RegionMask,
    DEFAULT_ALPHA,
};
use hug_geom::Semantic;

use crate::config::PipelineConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlapMode {
    Priority,
    Sum,
}

/// Latent-grid composition and partial-RGB injection on raw grid files.
#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Group latent grid.
    #[arg(long)]
    pub group: PathBuf,
    /// `latent.bin:mask.png` pair; repeat once per instance.
    #[arg(long = "instance", value_name = "LATENT:MASK")]
    pub instances: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = OverlapMode::Priority)]
    pub overlap: OverlapMode,
    /// `latent.bin:mask.png` noisy partial-RGB latent injected after composition.
    #[arg(long, value_name = "LATENT:MASK")]
    pub inject: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_pcd: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn pair(spec: &str, like: &LatentGrid) -> Result<(LatentGrid, RegionMask)> {
    let (z, m) = spec
        .rsplit_once(':')
        .ok_or_else(|| CliError::Input(format!("expected LATENT:MASK, got {spec:?}")))?;
    let grid = read_grid(Path::new(z))?;
    let mask = io::read_png(Path::new(m), Semantic::Mask)?;
    let region = downsample_mask_to_latent(&mask, like.height(), like.width())?;
    Ok((grid, region))
}

fn read_grid(path: &Path) -> Result<LatentGrid> {
    if !path.exists() {
        return Err(CliError::Input(format!("latent not found: {}", path.display())).into());
    }
    Ok(LatentGrid::read(path)?)
}

pub fn run(args: &ComposeArgs, _cfg: &PipelineConfig) -> Result<()> {
    let group = read_grid(&args.group)?;
    let instances = args
        .instances
        .iter()
        .map(|s| pair(s, &group))
        .collect::<Result<Vec<_>>>()?;
    let overlap = match args.overlap {
        OverlapMode::Priority => Overlap::Priority,
        OverlapMode::Sum => Overlap::Sum,
    };
    let mut out = compose_instance_to_group_with(&group, &instances, args.alpha, overlap)?;
    if let Some(spec) = &args.inject {
        let (raw, mask) = pair(spec, &group)?;
        out = inject_partial_rgb(&out, &raw, &mask, args.alpha_pcd)?;
    }
    out.write(&args.out)?;
    println!(
        "compose: {}x{}x{} grid, {} instances written to {}",
        out.height(),
        out.width(),
        out.channels(),
        instances.len(),
        args.out.display()
    );
    Ok(())
}
