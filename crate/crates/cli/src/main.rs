// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use singlet_cli::{load_run, simulate, spectrum, steady_state_report, sweep, CliError};

#[derive(Parser)]
#[command(
    name = "singlet",
    version,
    about = "Singlet generation by continuous homodyne detection"
)]
struct Cli {
    /// Only report warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble: trajectories, overlap histograms, selections, curves.
    Simulate(RunArgs),
    /// Analytic spectrum and peak report, optionally with simulated periodograms.
    Spectrum(RunArgs),
    /// Decoherence sweep with optimum-time search; resumes from part files.
    Sweep(RunArgs),
    /// Steady-state moments and ⟨S_x⟩ two ways.
    SteadyState {
        #[arg(long, allow_negative_numbers = true)]
        chi: f64,
        #[arg(long, allow_negative_numbers = true)]
        delta_q: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma_p: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $SINGLET_OUT, then output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let prepare = |a: RunArgs| load_run(&a.config, a.out, a.seed, a.threads);
    match cli.command {
        Command::Simulate(a) => simulate(&prepare(a)?),
        Command::Spectrum(a) => spectrum(&prepare(a)?),
        Command::Sweep(a) => sweep(&prepare(a)?),
        Command::SteadyState { chi, delta_q, gamma_p } => {
            print!("{}", steady_state_report(chi, delta_q, gamma_p)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
