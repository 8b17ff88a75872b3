//! `normlab`: desk-scale normalization-layer experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use normlab::config::ExperimentSpec;
use normlab::experiments::{run, Command, RunContext};
use normlab::HarnessError;

#[derive(Parser)]
#[command(
    name = "normlab",
    about = "Normalization-layer laboratory: train small networks under batch / ghost / group / batch-group normalization and sweep their inference behavior",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for result CSVs (overrides the config's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config; NORMLAB_SEED overrides both).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent sweep points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Retroactive inference example-weight sweep on a trained model.
    SweepAlpha(CommonArgs),
    /// Accuracy vs ghost batch size, one training run per size.
    SweepGhost(CommonArgs),
    /// Tuned-alpha accuracy over a (batch size x scheme) grid.
    Compare(CommonArgs),
    /// Class-stratified training: alpha off/on accuracy per scheme.
    NonIid(CommonArgs),
    /// Output-range tracking against the theoretical bound, plus the
    /// tightness-construction sweep.
    Bounds(CommonArgs),
}

fn execute(cmd: Command, args: &CommonArgs) -> Result<Vec<PathBuf>, HarnessError> {
    let spec = ExperimentSpec::from_path(&args.config)?;
    let seed = match std::env::var("NORMLAB_SEED") {
        Ok(text) => text.parse::<u64>().map_err(|_| {
            HarnessError::Config(format!("NORMLAB_SEED must be an integer, got {text:?}"))
        })?,
        Err(_) => args.seed.or(spec.seed).unwrap_or(0),
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| spec.out_dir.clone())
        .ok_or_else(|| {
            HarnessError::Config("no output directory: pass --out or set out_dir".into())
        })?;
    let ctx = RunContext {
        spec,
        out_dir,
        seed,
        jobs: args.jobs,
    };
    run(cmd, &ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match &cli.command {
        CliCommand::SweepAlpha(a) => (Command::SweepAlpha, a),
        CliCommand::SweepGhost(a) => (Command::SweepGhost, a),
        CliCommand::Compare(a) => (Command::Compare, a),
        CliCommand::NonIid(a) => (Command::NonIid, a),
        CliCommand::Bounds(a) => (Command::Bounds, a),
    };
    match execute(cmd, args) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
