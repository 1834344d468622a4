//! Command-line pipeline around the `hug-geom` toolkit.

pub mod commands;
pub mod config;
pub mod fixture;
pub mod layout;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use hug_geom::GeomError;

use commands::{compose, evaluate, pers2ortho, refine, render, rig, texture};
use config::PipelineConfig;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Caps worker threads; 0 or unset uses every core.
pub const THREADS_ENV: &str = "HUG_GEOM_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Parser)]
#[command(name = "hug-geom", version, about = "Multi-human mesh reconstruction geometry pipeline")]
pub struct Cli {
    /// Pipeline config JSON; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    Pers2ortho(pers2ortho::Pers2OrthoArgs),
    Refine(refine::RefineArgs),
    FuseTexture(texture::FuseTextureArgs),
    Evaluate(evaluate::EvaluateArgs),
    Render(render::RenderArgs),
    Compose(compose::ComposeArgs),
    Rig(rig::RigArgs),
    MakeFixture(commands::FixtureArgs),
}

/// Exit status for a failed run: numerical failures and internal errors are
/// told apart from bad input anywhere in the error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(g) = cause.downcast_ref::<GeomError>() {
            return if g.is_input_error() { EXIT_INPUT } else { EXIT_NUMERICAL };
        }
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return match c {
                CliError::Input(_) => EXIT_INPUT,
                CliError::Internal(_) => EXIT_INTERNAL,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_INTERNAL
}

/// Size the global thread pool from the environment.
pub fn init_threads() -> Result<(), CliError> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Input(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Pers2ortho(a) => pers2ortho::run(a, &cfg),
        Command::Refine(a) => refine::run(a, &cfg),
        Command::FuseTexture(a) => texture::run(a, &cfg),
        Command::Evaluate(a) => evaluate::run(a, &cfg),
        Command::Render(a) => render::run(a, &cfg),
        Command::Compose(a) => compose::run(a, &cfg),
        Command::Rig(a) => rig::run(a, &cfg),
        Command::MakeFixture(a) => commands::make_fixture(a, &cfg),
    }
}
