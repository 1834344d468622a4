pub mod compose;
pub mod evaluate;
pub mod pers2ortho;
pub mod refine;
pub mod render;
pub mod rig;
pub mod texture;

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use crate::config::PipelineConfig;
use crate::fixture::{write_fixture, FixtureOptions};

/// Generate the synthetic two-person fixture.
#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Canonical view resolution of the rendered targets.
    #[arg(long)]
    pub rig_size: Option<usize>,
    /// Seed of the initialization perturbation.
    #[arg(long)]
    pub perturb_seed: Option<u64>,
}

pub fn make_fixture(args: &FixtureArgs, _cfg: &PipelineConfig) -> Result<()> {
    let mut opts = FixtureOptions::default();
    if let Some(s) = args.rig_size {
        opts.rig_size = s;
    }
    if let Some(s) = args.perturb_seed {
        opts.seed = s;
    }
    write_fixture(&args.out, &opts)?;
    println!("make-fixture: written to {}", args.out.display());
    Ok(())
}
