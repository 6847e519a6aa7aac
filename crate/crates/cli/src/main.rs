use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use unlearn_core::experiments::{emit_report, parse_spec_for, run, ExperimentKind, ExperimentSpec};

/// Runs the localized-unlearning experiments on small synthetic corpora.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Localization methods against random regions.
    Revisit(RunArgs),
    /// Oracle region against a random region, per objective.
    Controlled(RunArgs),
    /// L2 distillation through the oracle and random regions.
    L2(RunArgs),
    /// The controlled experiment on the PII corpus.
    Pii(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment spec; missing keys take the experiment's defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Comma-separated run seeds.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Directory for trained model checkpoints.
    #[arg(long, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Search each objective's learning rate on the first seed.
    #[arg(long, overrides_with = "no_lr_search")]
    lr_search: bool,
    /// Use the default learning rates.
    #[arg(long, overrides_with = "lr_search")]
    no_lr_search: bool,
}

fn build_spec(kind: ExperimentKind, args: &RunArgs) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_spec_for(kind, &text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentSpec::for_kind(kind),
    };
    if let Some(seeds) = &args.seed {
        spec.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        spec.output_dir = Some(out.clone());
    }
    if let Some(cache) = &args.cache {
        spec.cache_dir = Some(cache.clone());
    }
    if args.jobs.is_some() {
        spec.jobs = args.jobs;
    }
    if args.lr_search {
        spec.lr_search.enabled = true;
    }
    if args.no_lr_search {
        spec.lr_search.enabled = false;
    }
    spec.validate()?;
    Ok(spec)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let (kind, args) = match &cli.command {
        Command::Revisit(a) => (ExperimentKind::Revisit, a),
        Command::Controlled(a) => (ExperimentKind::Controlled, a),
        Command::L2(a) => (ExperimentKind::L2Distill, a),
        Command::Pii(a) => (ExperimentKind::PiiControlled, a),
    };
    let spec = build_spec(kind, args)?;
    let out_dir = spec.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));
    if out_dir.is_file() {
        bail!("{} is a file", out_dir.display());
    }
    log::info!("{} run, config {}", kind.name(), &spec.config_hash()[..12]);
    let output = run(&spec, spec.cache_dir.as_deref())?;
    for note in &output.report.notes {
        log::warn!("{note}");
    }
    for path in emit_report(&output, &out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
