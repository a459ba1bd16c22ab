use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pairsource_cli::commands::{self, Context, TwoPolarizerInputs};
use pairsource_cli::config::LoadedConfig;
use pairsource_cli::replicate;
use pairsource_cli::CliError;

/// Design and analysis of two-crystal polarization-entangled pair sources.
#[derive(Parser)]
#[command(name = "pairsource", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed; overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut angle, walk-off budget and mode overlaps.
    Design,
    /// Optimal compensator thickness and residual phase curves.
    Compensate,
    /// Composite half-wave plate for the pair band.
    HwpDesign,
    /// Predicted single- and two-analyzer correlation curves.
    Curves,
    /// Synthetic polarizer sweeps and a pump-power scan.
    Simulate,
    /// Fidelity from a single-polarizer sweep, optionally cross-checked with
    /// three two-analyzer sweeps.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, requires_all = ["da", "lr"])]
        hv: Option<PathBuf>,
        #[arg(long, requires_all = ["hv", "lr"])]
        da: Option<PathBuf>,
        #[arg(long, requires_all = ["hv", "da"])]
        lr: Option<PathBuf>,
    },
    /// Re-derives the reference results and prints a pass/fail table.
    Replicate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let loaded = match &cli.config {
        Some(p) => LoadedConfig::load(p)?,
        None => LoadedConfig::defaults(),
    };
    let ctx = Context::new(loaded, cli.out, cli.seed)?;
    let summary = match cli.command {
        Command::Design => commands::design(&ctx)?,
        Command::Compensate => commands::compensate(&ctx)?,
        Command::HwpDesign => commands::hwp_design(&ctx)?,
        Command::Curves => commands::curves(&ctx)?,
        Command::Simulate => commands::simulate(&ctx)?,
        Command::Fit { input, hv, da, lr } => commands::fit(&ctx, &input, &TwoPolarizerInputs { hv, da, lr })?,
        Command::Replicate => {
            let rows = replicate::replicate(&ctx)?;
            for r in &rows {
                println!("{} {:>2} {}: {}", r.status(), r.id, r.name, r.detail);
            }
            let passed = rows.iter().filter(|r| r.pass == Some(true)).count();
            println!("{passed} of {} criteria passed", rows.len());
            if let Some(e) = replicate::stage_error(&rows) {
                return Err(e);
            }
            return Ok(());
        }
    };
    println!("{summary}");
    println!("wrote {}", ctx.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
