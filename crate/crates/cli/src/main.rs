//! `quantbench train|quantize|retrain|sweep|ecr|report --config <file> [--jobs N] [--out DIR]`
//!
//! Exit codes: 0 success, 1 I/O failure, 2 config or usage error, 3 data
//! format error, 4 numeric divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use quantbench::Error;

use crate::commands::Context;

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep worker threads
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Seed; overrides QUANTBENCH_SEED and the config
    #[arg(long)]
    seed: Option<u64>,
    /// Input checkpoint for quantize (default OUT/float.ckpt) or retrain (default OUT/quantized.ckpt)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Bit width for quantize; overrides `quant.bits`
    #[arg(long)]
    bits: Option<u32>,
    /// Comma-separated weight groups for quantize; overrides `quant.groups`
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<String>>,
}

#[derive(Parser)]
#[command(name = "quantbench", version, about = "Fixed-point weight quantization experiments")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    #[command(about = "Floating-point training; writes float.ckpt and train_log.csv")]
    Train(Common),
    #[command(about = "Direct quantization of a float checkpoint; writes quantized.ckpt and quant_report.csv")]
    Quantize(Common),
    #[command(about = "Retraining of a quantized checkpoint; writes retrained.ckpt and retrain_log.csv")]
    Retrain(Common),
    #[command(about = "Size or depth × precision sweep; writes records.csv")]
    Sweep(Common),
    #[command(about = "Effective compression ratios from records.csv; writes ecr.csv")]
    Ecr(Common),
    #[command(about = "Tables, plot series and a Markdown summary from records.csv")]
    Report(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Dimension { .. } => 2,
        Error::Format(_) => 3,
        Error::Divergence { .. } => 4,
        Error::Io { .. } => 1,
    }
}

fn run(args: Args) -> quantbench::Result<()> {
    let (run, common): (fn(&Context) -> quantbench::Result<()>, Common) = match args.command {
        Cmd::Train(c) => (commands::train, c),
        Cmd::Quantize(c) => (commands::quantize, c),
        Cmd::Retrain(c) => (commands::retrain, c),
        Cmd::Sweep(c) => (commands::sweep, c),
        Cmd::Ecr(c) => (commands::ecr, c),
        Cmd::Report(c) => (commands::report, c),
    };
    let loaded = config::load(&common.config)?;
    let env_seed = std::env::var(config::SEED_ENV).ok();
    let seed = config::resolve_seed(common.seed, env_seed.as_deref(), loaded.config.seed)?;
    let ctx = Context {
        out: loaded.output_dir(common.out.as_deref())?,
        loaded,
        seed,
        jobs: common.jobs as usize,
        checkpoint: common.checkpoint,
        bits: common.bits,
        groups: common.groups,
    };
    run(&ctx)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("quantbench: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
