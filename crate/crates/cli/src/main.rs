use std::path::PathBuf;
use std::process::ExitCode;

use calib_il_cli::spec::SEED_ENV;
use calib_il_cli::{execute, logging, CliResult, Command, Options, RunSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "calib-il", version, about = "Transferable bias correction for memoryless class-incremental learning")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// JSON run-spec.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate reference and target datasets.
    Gen(Common),
    /// Train references and fit their calibration tables.
    RunReference(Common),
    /// Train targets and compare raw, BiC, adBiC and oracle.
    RunTarget(Common),
    /// Reference-count ablation and halved-training-data runs.
    Sweep(Common),
    /// Render SVG figures from the metrics CSVs.
    Plot(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    let (command, common) = match cli.command {
        Sub::Gen(c) => (Command::Gen, c),
        Sub::RunReference(c) => (Command::RunReference, c),
        Sub::RunTarget(c) => (Command::RunTarget, c),
        Sub::Sweep(c) => (Command::Sweep, c),
        Sub::Plot(c) => (Command::Plot, c),
    };
    logging::init(common.verbose);
    let env_seed = std::env::var(SEED_ENV).ok();
    let spec = RunSpec::load(&common.spec, env_seed.as_deref())?;
    let opts = Options {
        spec,
        out: common.out,
        jobs: common.jobs,
    };
    execute(command, &opts)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("level=error msg={:?}", e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
