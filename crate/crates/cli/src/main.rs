use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod output;

/// Penalization solvers for reflected backward doubly stochastic equations.
#[derive(Debug, Parser)]
#[command(name = "rbdsde", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one configuration and write summary.json and timeseries.csv.
    Run {
        config: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Check that the solution of config A stays below that of config B on
    /// shared paths and write comparison.json.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the penalty ladder (and optionally a grid refinement table) to
    /// convergence.csv.
    Convergence {
        config: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Also solve on N/4, N/2 and N steps.
        #[arg(long)]
        grid: bool,
    },
    /// Compare Y_0 against the lattice optimal-stopping value and write
    /// oracle.json.
    OracleCheck {
        config: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Lattice steps; the check also runs twice as many.
        #[arg(long, default_value_t = rbdsde::oracles::DEFAULT_LATTICE_STEPS)]
        lattice_steps: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rbdsde::init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(commands::EXIT_INVALID);
    }
    let code = match cli.command {
        Command::Run { config, out } => commands::run(&config, &out),
        Command::Compare {
            config_a,
            config_b,
            out,
        } => commands::compare(&config_a, &config_b, &out),
        Command::Convergence { config, out, grid } => commands::convergence(&config, &out, grid),
        Command::OracleCheck {
            config,
            out,
            lattice_steps,
        } => commands::oracle_check(&config, &out, lattice_steps),
    };
    ExitCode::from(code)
}
