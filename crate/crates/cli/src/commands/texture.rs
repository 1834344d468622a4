use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hug_geom::io;
use hug_geom::texture::{fuse_texture_with, TextureView};
use hug_geom::{rasterize, vertex_visibility, RasterOptions, Scene, Semantic};
use log::info;

use crate::config::{existing, optional, PipelineConfig};
use crate::layout::{self, view_dir, MESH_DIR};
use crate::CliError;

/// Depth tolerance (meters) for a vertex to count as visible in a view.
const VISIBILITY_EPS: f64 = 5e-3;

/// Blend per-view RGB into vertex colours.
#[derive(Debug, Args)]
pub struct FuseTextureArgs {
    /// Directory of meshes to colour.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Directory holding view_{azimuth}/rgb.png images.
    #[arg(long)]
    pub views: Option<PathBuf>,
    /// Defaults to rig.json beside the views.
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Defaults to normalization.json beside the views.
    #[arg(long)]
    pub normalization: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Dilation of the depth-edge band excluded from blending (pixels).
    #[arg(long)]
    pub dilate: Option<usize>,
    /// Also write per-view confidence masks.
    #[arg(long)]
    pub debug: bool,
}

pub fn run(args: &FuseTextureArgs, cfg: &PipelineConfig) -> Result<()> {
    let views_path = existing(&args.views, &cfg.paths.targets, "views")?;
    let (sib_rig, sib_norm) = layout::sibling_rig_files(&views_path);
    let rig_path = optional(&args.rig, &cfg.paths.rig, "rig")?.or(sib_rig);
    let norm_path = optional(&args.normalization, &cfg.paths.normalization, "normalization")?.or(sib_norm);
    let scene = layout::read_scene(&args.mesh)?;
    let rig = layout::load_rig(
        rig_path.as_deref(),
        norm_path.as_deref(),
        &scene,
        (cfg.rig.width, cfg.rig.height),
        cfg.rig.padding,
    )?
    .in_world()?;

    let mut used = Vec::new();
    for view in &rig.views {
        let dir = view_dir(&views_path, view.azimuth_deg);
        if !dir.is_dir() {
            continue;
        }
        let rgb_path = dir.join("rgb.png");
        if !rgb_path.exists() {
            return Err(CliError::Input(format!("missing view image {}", rgb_path.display())).into());
        }
        let rgb = io::read_png(&rgb_path, Semantic::Rgb)?;
        if rgb.width() != view.camera.width || rgb.height() != view.camera.height {
            return Err(CliError::Input(format!("{} does not match the rig resolution", rgb_path.display())).into());
        }
        let depth = rasterize(&scene, &view.camera, &RasterOptions::default())?.depth;
        used.push((
            view.azimuth_deg,
            TextureView {
                camera: view.camera,
                rgb,
                depth,
            },
        ));
    }
    if used.is_empty() {
        return Err(CliError::Input(format!("no view_{{azimuth}} directories in {}", views_path.display())).into());
    }
    let views: Vec<TextureView> = used.iter().map(|(_, v)| v.clone()).collect();
    let dilate = args.dilate.unwrap_or(cfg.texture.dilate_kernel);

    let mut coloured = Vec::new();
    let mut debug = Vec::new();
    for mesh in scene.instances() {
        let visibility = views
            .iter()
            .map(|v| vertex_visibility(mesh, &scene, &v.camera, VISIBILITY_EPS))
            .collect::<hug_geom::Result<Vec<_>>>()?;
        let fusion = fuse_texture_with(mesh, &views, &visibility, dilate)?;
        info!("instance {}: {} vertices hole-filled", mesh.instance_id(), fusion.filled);
        if args.debug || cfg.texture.debug {
            for c in &fusion.contributions {
                debug.push((used[c.view_index].0, mesh.instance_id(), c.confidence_mask.clone()));
            }
        }
        coloured.push(fusion.mesh);
    }
    let scene = Scene::new(coloured)?;
    layout::write_scene(&args.out.join(MESH_DIR), &scene)?;
    for (az, id, mask) in debug {
        let path = view_dir(&args.out.join("debug"), az).join(format!("instance_{id}_confidence.png"));
        io::write_png(&path, &mask)?;
    }
    println!(
        "fuse-texture: {} instances coloured from {} views",
        scene.instances().len(),
        views.len()
    );
    Ok(())
}
