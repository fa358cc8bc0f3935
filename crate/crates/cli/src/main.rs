mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "nearbeam",
    version,
    about = "Near-field beam-training simulator and benchmark runner"
)]
struct Cli {
    /// TOML config; missing keys take the built-in reference defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; created if absent.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Master seed for noise and user draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// "all" or a comma-separated engine list.
    #[arg(long, global = true, value_name = "LIST")]
    engines: Option<String>,
    /// Monte Carlo trials per sweep point.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Final-layer candidate rule: "window" or "strict".
    #[arg(long, global = true, value_name = "RULE")]
    last_layer_rule: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the polar codebook as CSV plus packed complex weights.
    Codebook,
    /// Write noiseless gain profiles of the full array and a center block.
    Profile,
    /// Run one engine on one user and write its per-layer trace.
    Train,
    /// Run the configured benchmark sweep and write per-point results.
    Sweep,
}

fn run(cli: Cli) -> Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let overrides = config::Overrides {
        seed: cli.seed,
        engines: cli.engines,
        trials: cli.trials,
        last_layer_rule: cli.last_layer_rule,
    };
    let app = config::resolve(file, &overrides)?;
    match cli.command {
        Command::Codebook => commands::codebook(&app, &cli.out),
        Command::Profile => commands::profile(&app, &cli.out),
        Command::Train => commands::train(&app, &cli.out),
        Command::Sweep => commands::sweep(&app, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
