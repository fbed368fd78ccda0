use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lemsim::cli::{run_command, Overrides};

#[derive(Parser)]
#[command(name = "lemsim", version, about = "Two-tier local electricity market simulator")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the result bundle.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Weight on losses and voltage regulation.
        #[arg(long)]
        xi: Option<f64>,
        /// Degradation allowed on earlier secondary-market stages.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Horizon in minutes.
        #[arg(long)]
        horizon: Option<u32>,
        /// Skip the no-market power flow comparison.
        #[arg(long)]
        no_lem_baseline: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        scenario,
        out,
        xi,
        epsilon,
        seed,
        horizon,
        no_lem_baseline,
    } = Args::parse().command;
    let overrides = Overrides {
        xi,
        epsilon,
        seed,
        horizon,
        skip_no_lem_baseline: no_lem_baseline,
    };
    match run_command(&scenario, &out, &overrides) {
        Ok(outcome) => {
            let m = &outcome.metrics;
            println!(
                "{} primary and {} secondary clearings; mean |V-1| {:.6} with market{}",
                m.pm_clearings,
                m.sm_clearings,
                m.mean_dev_lem,
                m.mean_dev_no_lem
                    .map(|d| format!(", {d:.6} without"))
                    .unwrap_or_default()
            );
            if let Some(h) = &outcome.halt {
                eprintln!("halted: {h}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
