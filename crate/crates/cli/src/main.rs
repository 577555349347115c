use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use speedscale_cli::{compare, load, run, Overrides};

#[derive(Parser)]
#[command(name = "speedscale", version, about = "Speed-scaling scheduling experiments: simulate, verify, compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy on every workload and write reports.
    Run(Common),
    /// Print a cross-policy cost table over the scenario's workload.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    config: PathBuf,
    /// Output directory, overriding the scenario's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random workloads, overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Event budget per simulation.
    #[arg(long)]
    max_events: Option<usize>,
}

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (Command::Run(c) | Command::Compare(c)) = &cli.command;
    let overrides = Overrides { out: c.out.clone(), seed: c.seed, max_events: c.max_events };
    let prepared = match load(&c.config, &overrides) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Run(_) => run(&prepared),
        Command::Compare(_) => compare(&prepared),
    };
    match result {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(t) = &report.table {
                print!("{t}");
            }
            let verdict = if report.passed { "passed" } else { "FAILED" };
            println!("{}: {verdict} (reports in {})", prepared.scenario.name, report.out_dir.display());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
