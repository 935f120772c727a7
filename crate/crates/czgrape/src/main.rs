use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use czgrape::commands::{self, GlobalOptions, Session};
use czgrape::CliError;

#[derive(Parser)]
#[command(name = "czgrape", version, about = "Closed-loop CZ pulse optimization on an emulated device")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Validate the configuration and list outputs without running.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed-loop optimization.
    Optimize,
    /// Process tomography of one pulse.
    Qpt {
        /// Pulse file; defaults to the configured initial pulse.
        #[arg(long)]
        pulse: Option<PathBuf>,
        /// Also fit a gate operator to the process matrix.
        #[arg(long)]
        fit_operator: bool,
    },
    /// Chevron scan and coupling fit.
    Chevron,
    /// Reference and interleaved randomized benchmarking.
    Rb {
        #[arg(long, conflicts_with = "ideal")]
        pulse: Option<PathBuf>,
        /// Benchmark an ideal CZ.
        #[arg(long)]
        ideal: bool,
    },
    /// Re-run recorded steps and compare with a trajectory file.
    Replay {
        trajectory: PathBuf,
        #[arg(long)]
        step: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let opts = GlobalOptions { seed: cli.seed, jobs: cli.jobs, dry_run: cli.dry_run, output_dir: cli.output_dir };
    let mut out = io::stdout().lock();
    if let Command::Replay { trajectory, step } = &cli.command {
        commands::replay(trajectory, *step, cli.jobs, &mut out)?;
        return Ok(());
    }
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let session = Session::load(&path, &opts)?;
    match cli.command {
        Command::Optimize => commands::optimize(&session, &mut out).map(drop),
        Command::Qpt { pulse, fit_operator } => commands::qpt(&session, pulse.as_deref(), fit_operator, &mut out).map(drop),
        Command::Chevron => commands::chevron(&session, &mut out).map(drop),
        Command::Rb { pulse, ideal } => commands::rb(&session, pulse.as_deref(), ideal, &mut out).map(drop),
        Command::Replay { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
