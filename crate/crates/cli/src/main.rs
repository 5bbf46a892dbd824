use std::path::PathBuf;

use aaphd::config::{parse_config, ScenarioConfig};
use aaphd::experiment::{run_experiment, write_csv, ExperimentPlan, Variant};
use aaphd::fusion::FusionScheme;
use aaphd::netsim::{max_iterations, DecoderKind};
use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use log::info;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    Flood,
    Consensus,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecoderArg {
    Is,
    Ss,
}

/// Monte-Carlo simulator for distributed particle-PHD filtering with
/// arithmetic-average fusion.
#[derive(Debug, Parser)]
#[command(name = "aaphd", version)]
struct Args {
    /// Scenario file (TOML). Defaults to the built-in reference scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Monte-Carlo runs. Defaults to `monte_carlo.runs`.
    #[arg(long)]
    runs: Option<usize>,
    /// Fusion rounds per step, comma separated. Defaults to `fusion.iterations`.
    #[arg(long, value_delimiter = ',')]
    iterations: Vec<usize>,
    #[arg(long, value_enum, default_value = "consensus")]
    fusion: FusionArg,
    #[arg(long, value_enum, default_value = "is")]
    decoder: DecoderArg,
    /// Master seed; run `r` uses `seed + r`. Defaults to `monte_carlo.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the CSV files.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Args::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(args: Args) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => parse_config(path).with_context(|| format!("reading {}", path.display()))?,
        None => ScenarioConfig::reference(),
    };
    let scenario = cfg.build()?;
    let iterations = if args.iterations.is_empty() {
        vec![cfg.fusion.iterations]
    } else {
        args.iterations.clone()
    };
    let i_max = max_iterations(&cfg.pipeline)?;
    if let Some(&i) = iterations.iter().find(|&&i| i > i_max) {
        log::warn!("I={i} exceeds the {i_max} rounds that fit in one scan period");
    }
    let variant = match args.fusion {
        FusionArg::None => Variant::NONCOOPERATIVE,
        FusionArg::Flood | FusionArg::Consensus => {
            if iterations.contains(&0) {
                bail!("--iterations must be positive for cooperative fusion; use --fusion none instead");
            }
            let scheme = if args.fusion == FusionArg::Flood {
                FusionScheme::Flood
            } else {
                FusionScheme::Consensus
            };
            let decoder = match args.decoder {
                DecoderArg::Is => DecoderKind::Is,
                DecoderArg::Ss => DecoderKind::Ss,
            };
            Variant::new(scheme, decoder)
        }
    };
    let plan = ExperimentPlan {
        runs: args.runs.unwrap_or(cfg.monte_carlo.runs),
        seed: args.seed.unwrap_or(cfg.monte_carlo.seed),
        iterations,
        variants: vec![variant],
    };
    if plan.runs == 0 {
        bail!("--runs must be at least 1");
    }
    info!(
        "{} runs of {} over {} steps, seed {}",
        plan.runs, variant, cfg.simulation.steps, plan.seed
    );
    let tables = run_experiment(&scenario, &plan)?;
    let files = write_csv(&tables, &args.out).with_context(|| format!("writing to {}", args.out.display()))?;
    for r in &tables.results {
        println!(
            "{:<8} I={:<3} TN-OSPA={:.3} ACC={:.1} fallbacks={}",
            r.variant.name(),
            r.iterations,
            r.summary.tn_ospa,
            r.acc,
            r.fallbacks
        );
    }
    info!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}
