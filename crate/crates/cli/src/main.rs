//! `prio-market`: subgame-perfect equilibria of a paid-prioritization
//! content market, verified against a brute-force user simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prio_market_cli::commands::{
    equilibrium_row, optimize_row, oracle_row, validate_report, welfare_row, CliError, RunOptions,
};
use prio_market_cli::rows::{emit_csv, rows_to_csv, ResultRow};
use prio_market_cli::scenario::load_scenario;
use prio_market_cli::sweep::run_sweep;

#[derive(Parser)]
#[command(
    name = "prio-market",
    version,
    about = "Paid-prioritization market simulator: closed-form equilibria with brute-force verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,

    /// Write results as CSV to this path
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Oracle / numeric-integration grid size
    #[arg(long, value_name = "N", default_value_t = 100_001)]
    grid: usize,

    /// Oracle tolerance override (default max(1e-3, 10/N))
    #[arg(long, value_name = "X")]
    tol: Option<f64>,

    /// Offer a contract only to the most profitable CP
    #[arg(long)]
    exclusive: bool,

    /// Permit explicit delay profiles above the default tier
    #[arg(long)]
    allow_throttling: bool,

    /// Seed for randomized multi-starts
    #[arg(long, value_name = "K", default_value_t = 20_260_101)]
    seed: u64,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            grid: self.grid,
            tol: self.tol,
            exclusive: self.exclusive,
            allow_throttling: self.allow_throttling,
            seed: self.seed,
        }
    }

    fn scenario_id(&self) -> String {
        self.scenario
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check the parameter assumptions and report the applicable regime
    Validate(Common),
    /// Closed-form equilibrium masses, revenues and welfare
    Equilibrium(Common),
    /// Fast-lane contracts under the scenario's mode
    Optimize(Common),
    /// Run a named figure recipe (fig3..fig11) or the scenario's custom sweep
    Sweep {
        /// Recipe name: fig3..fig11, or `custom`
        recipe: String,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate discretized users and compare with the closed forms
    Oracle(Common),
    /// Welfare by both methods, with deltas against the default tier
    Welfare(Common),
}

fn write_rows(rows: &[ResultRow], out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => emit_csv(rows, path).map_err(CliError::Output),
        None => {
            print!("{}", rows_to_csv(rows).map_err(CliError::Output)?);
            Ok(())
        }
    }
}

fn run() -> Result<(), CliError> {
    if let Ok(threads) = std::env::var("PRIO_MARKET_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }

    let cli = Cli::parse();
    match &cli.command {
        Command::Validate(common) => {
            let scenario = load_scenario(&common.scenario)?;
            let (_, row, text) = validate_report(&scenario, &common.scenario_id());
            print!("{text}");
            if let Some(out) = &common.out {
                emit_csv(&[row], out).map_err(CliError::Output)?;
            }
            Ok(())
        }
        Command::Equilibrium(common) => {
            let scenario = load_scenario(&common.scenario)?;
            let row = equilibrium_row(&scenario, &common.scenario_id(), &common.options())?;
            write_rows(&[row], common.out.as_ref())
        }
        Command::Optimize(common) => {
            let scenario = load_scenario(&common.scenario)?;
            let row = optimize_row(&scenario, &common.scenario_id(), &common.options())?;
            write_rows(&[row], common.out.as_ref())
        }
        Command::Sweep { recipe, common } => {
            let scenario = load_scenario(&common.scenario)?;
            let rows = run_sweep(&scenario, recipe, &common.scenario_id(), &common.options())?;
            write_rows(&rows, common.out.as_ref())
        }
        Command::Oracle(common) => {
            let scenario = load_scenario(&common.scenario)?;
            let row = oracle_row(&scenario, &common.scenario_id(), &common.options())?;
            write_rows(&[row], common.out.as_ref())
        }
        Command::Welfare(common) => {
            let scenario = load_scenario(&common.scenario)?;
            let row = welfare_row(&scenario, &common.scenario_id(), &common.options())?;
            write_rows(&[row], common.out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
