use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hug_geom::canonical::build_rig;
use hug_geom::io;
use hug_geom::pers2ortho::{pers2ortho, refine_geometry, Pers2OrthoParams};
use hug_geom::{Scene, Semantic};
use log::info;

use crate::config::{existing, PipelineConfig};
use crate::layout::{self, view_dir, MESH_DIR};
use crate::CliError;

/// Re-project the perspective input into the partial canonical views.
#[derive(Debug, Args)]
pub struct Pers2OrthoArgs {
    #[arg(long)]
    pub input_rgb: Option<PathBuf>,
    #[arg(long)]
    pub input_camera: Option<PathBuf>,
    /// Predicted depth (PFM) seen from the input camera.
    #[arg(long)]
    pub input_depth: Option<PathBuf>,
    /// Predicted normals (PFM) seen from the input camera.
    #[arg(long)]
    pub input_normal: Option<PathBuf>,
    /// Directory of initial meshes.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Depth agreement threshold in meters.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Geometry refinement steps against the input depth and normals.
    #[arg(long)]
    pub partial_iters: Option<usize>,
    /// Canonical view resolution (square).
    #[arg(long)]
    pub size: Option<usize>,
}

pub fn run(args: &Pers2OrthoArgs, cfg: &PipelineConfig) -> Result<()> {
    let p = &cfg.paths;
    let rgb_path = existing(&args.input_rgb, &p.input_rgb, "input-rgb")?;
    let cam_path = existing(&args.input_camera, &p.input_camera, "input-camera")?;
    let depth_path = existing(&args.input_depth, &p.input_depth, "input-depth")?;
    let normal_path = existing(&args.input_normal, &p.input_normal, "input-normal")?;
    let init_path = existing(&args.init, &p.init, "init")?;

    // everything is loaded and checked before anything is written
    let rgb = io::read_png(&rgb_path, Semantic::Rgb)?;
    let camera = io::read_camera(&cam_path)?;
    let depth = io::read_pfm(&depth_path, Semantic::Depth)?;
    let normal = io::read_pfm(&normal_path, Semantic::Normal)?;
    let init = layout::read_scene(&init_path)?;
    for (name, img) in [("input-rgb", &rgb), ("input-depth", &depth), ("input-normal", &normal)] {
        if img.width() != camera.width || img.height() != camera.height {
            return Err(CliError::Input(format!(
                "{name} is {}x{} but the camera is {}x{}",
                img.width(),
                img.height(),
                camera.width,
                camera.height
            ))
            .into());
        }
    }

    let iters = args.partial_iters.unwrap_or(cfg.pers2ortho.partial_iters);
    let partial = if iters > 0 {
        let r = refine_geometry(
            init.instances().to_vec(),
            &depth,
            &normal,
            &camera,
            iters,
            cfg.pers2ortho.partial_lr,
        )?;
        info!(
            "partial geometry loss {:.6} -> {:.6}",
            r.trace[0], r.trace[r.best_iteration]
        );
        Some(Scene::new(r.meshes)?)
    } else {
        None
    };

    let (w, h) = match args.size {
        Some(s) => (s, s),
        None => (cfg.rig.width, cfg.rig.height),
    };
    let rig = build_rig(cfg.rig.distance, w, h)?;
    let params = Pers2OrthoParams {
        padding: cfg.rig.padding,
        tau: args.tau.unwrap_or(cfg.pers2ortho.tau),
        erode_kernel: cfg.pers2ortho.erode_kernel,
        dilate_kernel: cfg.pers2ortho.dilate_kernel,
    };
    let (views, rig) = pers2ortho(&rgb, &camera, &init, partial.as_ref().unwrap_or(&init), &rig, &params)?;

    layout::write_rig_files(&args.out, &rig)?;
    for (v, view) in rig.views.iter().enumerate() {
        let dir = view_dir(&args.out, view.azimuth_deg);
        if let (Some(img), Some(mask)) = (views.partial_rgb.get(&v), views.visibility.get(&v)) {
            io::write_png(&dir.join("rgb.png"), img)?;
            io::write_png(&dir.join("mask.png"), mask)?;
            info!("view {}: {} partial pixels", view.azimuth_deg, mask.count_set());
        }
        io::write_pfm(&dir.join("normal.pfm"), &views.smplx_normals[&v])?;
    }
    if let Some(partial) = &partial {
        layout::write_scene(&args.out.join(MESH_DIR), partial)?;
    }
    println!(
        "pers2ortho: {} partial views, {} normal views written to {}",
        views.partial_rgb.len(),
        views.smplx_normals.len(),
        args.out.display()
    );
    Ok(())
}
