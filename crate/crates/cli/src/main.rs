use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hemnet_cli::{execute, CliError, Command};

#[derive(Parser)]
#[command(name = "hemnet", version, about = "Highway-EM attention experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate a toy segmentation dataset.
    Gen(Common),
    /// Train the toy model and write metrics, gradients, and a checkpoint.
    Train(Common),
    /// Run the gradient and convergence self-checks.
    Gradcheck(Common),
    /// Train over a step-size × depth grid and evaluate at several depths.
    Sweep(Common),
    /// ELBO curves and per-layer gradient profiles over a step-size grid.
    Fig3(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Sub::Gen(a) => (Command::Gen, a),
        Sub::Train(a) => (Command::Train, a),
        Sub::Gradcheck(a) => (Command::Gradcheck, a),
        Sub::Sweep(a) => (Command::Sweep, a),
        Sub::Fig3(a) => (Command::Fig3, a),
    };
    match execute(cmd, args.config.as_deref(), &args.out, args.seed) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Training { dump, .. } = &e {
                println!("{}", dump.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
