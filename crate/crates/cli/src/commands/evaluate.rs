use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hug_geom::canonical::Normalization;
use hug_geom::io;
use hug_geom::metrics::{evaluate, evaluation_cameras, EvalOptions, MetricReport, MetricValues};

use crate::config::{existing, PipelineConfig};
use crate::layout::{self, METRICS_CSV, METRICS_FILE};

/// Score predicted meshes against ground truth.
#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of predicted meshes.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth meshes.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Surface samples per instance.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Evaluation render size (square).
    #[arg(long)]
    pub render_size: Option<usize>,
}

/// Aligned text table with one row for the scene and one per instance.
pub fn format_table(report: &MetricReport) -> String {
    let mut rows: Vec<(String, &MetricValues)> = vec![("scene".into(), &report.scene)];
    rows.extend(report.instances.iter().map(|(k, v)| (format!("instance {k}"), v)));
    let mut cells: Vec<Vec<String>> = vec![std::iter::once(String::new())
        .chain(MetricValues::KEYS.iter().map(|k| k.to_string()))
        .collect()];
    for (name, v) in rows {
        let mut row = vec![name];
        row.extend(v.values().iter().map(|s| match s {
            Some(s) if s.0.is_finite() => format!("{:.4}", s.0),
            Some(s) => s.to_string(),
            None => "-".into(),
        }));
        cells.push(row);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    if report.cp_flagged {
        out.push_str("cp: prediction has no contact vertices\n");
    }
    out
}

pub fn run(args: &EvaluateArgs, cfg: &PipelineConfig) -> Result<()> {
    let gt_path = existing(&args.gt, &cfg.paths.gt, "gt")?;
    let pred = layout::read_scene(&args.pred)?;
    let gt = layout::read_scene(&gt_path)?;
    let size = args.render_size.unwrap_or(cfg.evaluate.render_size);
    let norm = Normalization::fit(&gt, cfg.rig.padding)?;
    let cameras = evaluation_cameras(size, size)?
        .iter()
        .map(|c| norm.world_camera(c))
        .collect::<hug_geom::Result<Vec<_>>>()?;
    let e = &cfg.evaluate;
    let opts = EvalOptions {
        samples: args.samples.unwrap_or(e.samples),
        seed: cfg.seed,
        fscore_tau_cm: e.fscore_tau_cm,
        contact_delta: e.contact_delta,
        chamfer: e.chamfer.into(),
        p2s_squared: e.p2s_squared,
    };
    let report = evaluate(&pred, &gt, &cameras, &opts)?;
    io::write_atomic(&args.out.join(METRICS_FILE), format!("{}\n", report.to_json()?).as_bytes())?;
    io::write_atomic(&args.out.join(METRICS_CSV), report.to_csv().as_bytes())?;
    print!("{}", format_table(&report));
    Ok(())
}
