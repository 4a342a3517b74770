use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use tlse_cli::config::{ExperimentConfig, ExperimentKind};
use tlse_cli::experiments::run;
use tlse_cli::output::{Manifest, Sink};

/// Runs one experiment from a TOML config and writes its tables, plots, and
/// JSON summaries into the output directory.
#[derive(Debug, Parser)]
#[command(name = "tlse", version)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[system].seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to `[experiment].out`, then `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `[experiment].name`.
    #[arg(long)]
    experiment: Option<ExperimentKind>,
}

fn main() -> Result<()> {
    let args = Args::parse();
    if let Some(k) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.system.seed = seed;
    }
    if let Some(kind) = args.experiment {
        cfg.experiment.name = kind;
    }
    cfg.validate()?;
    let out = args
        .out
        .or_else(|| cfg.experiment.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name.name()));
    let sink = Sink::new(out, Manifest::new(cfg.hash(), cfg.system.seed))?;
    let summary = run(&cfg, &sink)?;
    println!("{summary}");
    println!("outputs in {}", sink.dir.display());
    Ok(())
}
