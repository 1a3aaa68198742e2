//! `gsa`: command-line front end of the sensitivity pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsa_pipeline::{run_pipeline, PipelineConfig, RunOptions, Seeds, Stage};

#[derive(Parser)]
#[command(name = "gsa", version, about = "Designed sensitivity experiment on a nitrogen landscape surrogate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON). Without it the built-in defaults are used and --seed is required.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Sets both the design and the analysis seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute this stage and every later one even if cached.
    #[arg(long, global = true, value_parser = parse_stage)]
    stage_from: Option<Stage>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate and certify the fractional factorial design.
    Design,
    /// Run the surrogate on every design row.
    Simulate,
    /// Dynamic, spatial, aggregated and multivariate sensitivity per outcome.
    Analyze,
    /// Cluster outcome profiles and build summary tables.
    Synthesize,
    /// Write plot-ready CSV bundles.
    Report,
    /// All stages in order, reusing cached ones.
    Run,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: gsa_pipeline::Error| e.to_string())
}

fn config(common: &Common) -> gsa_pipeline::Result<PipelineConfig> {
    let mut cfg = match (&common.config, common.seed) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(seed)) => PipelineConfig::with_seeds(Seeds { design: seed, analysis: seed }),
        (None, None) => {
            return Err(gsa_pipeline::Error::Config("pass --config or --seed; seeds are never implicit".into()))
        }
    };
    if let Some(seed) = common.seed {
        cfg.seeds = Seeds { design: seed, analysis: seed };
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut options = match cli.command {
        Command::Design => RunOptions::only(Stage::Design),
        Command::Simulate => RunOptions::only(Stage::Simulate),
        Command::Analyze => RunOptions::only(Stage::Analyze),
        Command::Synthesize => RunOptions::only(Stage::Synthesize),
        Command::Report => RunOptions::only(Stage::Report),
        Command::Run => RunOptions::all(),
    };
    options.force_from = cli.common.stage_from;
    let result = config(&cli.common).and_then(|cfg| run_pipeline(&cfg, &options));
    match result {
        Ok(summary) => {
            for (stage, status) in &summary.stages {
                println!("{stage}: {status:?}");
            }
            println!("simulations run: {}", summary.simulations_run);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
