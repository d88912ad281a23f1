//! `twfe` binary: argument parsing and exit-code mapping. All real work
//! lives in the library so tests can drive it directly.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use twfe_cli::commands::{
    run_diagnose, run_estimate, run_simulate, run_tau_sweep, run_test, DiagnoseArgs, EstimateArgs,
    SimulateArgs, TauSweepArgs, TestArgs,
};
use twfe_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "twfe",
    version,
    about = "Dynamic nonlinear panel estimation with two-way fixed effects and likelihood bias correction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit θ on a long-format panel file and write estimates with standard errors.
    Estimate {
        /// Run configuration JSON (columns, family, index form, lag order).
        #[arg(long)]
        config: PathBuf,
        /// Long-format data file; overrides the config's data path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; overrides the config's out path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// raw, corrected, or both (default both).
        #[arg(long)]
        objective: Option<String>,
        /// Score-autocovariance truncation lag; overrides the config.
        #[arg(long)]
        tau: Option<usize>,
    },
    /// Test parameter restrictions with LR, LM, and Wald statistics.
    Test {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        tau: Option<usize>,
        /// Restriction, e.g. "rho=0" or "l1=l2=l3"; repeatable, commas conjoin.
        #[arg(long = "constraint")]
        constraints: Vec<String>,
        /// Comma-separated subset of lr,lm,wald (default all three).
        #[arg(long)]
        kinds: Option<String>,
    },
    /// Run a Monte Carlo study on a named design and write rejection curves.
    Simulate {
        /// Design tag, e.g. logit-ds-dynamic or probit-additive-static.
        #[arg(long)]
        design: String,
        /// Units; defaults to the design's catalog size.
        #[arg(long)]
        n: Option<usize>,
        /// Periods; defaults to the design's catalog size.
        #[arg(long)]
        t: Option<usize>,
        /// Monte Carlo replications.
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// Truncation lag for the corrected likelihood.
        #[arg(long, default_value_t = 1)]
        tau: usize,
        /// Master seed; replication r uses a stream derived from (seed, r).
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated θ offsets for the null grid (default −0.30…0.30 by 0.02).
        #[arg(long, allow_hyphen_values = true)]
        delta_grid: Option<String>,
        /// Comma-separated subset of lr,lm,wald (default lr).
        #[arg(long)]
        kinds: Option<String>,
        /// Nominal test level.
        #[arg(long, default_value_t = 0.05)]
        nominal: f64,
        /// Bound the worker pool; results do not depend on this.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check that the scaled inverse of the fixed-effect Schur complement is
    /// invariant to the panel's growing dimension.
    Diagnose {
        #[arg(long)]
        design: String,
        /// Offset added to every θ₀ coordinate before profiling.
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// time, unit, or both.
        #[arg(long, default_value = "both")]
        side: String,
        /// Size of the non-varying panel dimension.
        #[arg(long, default_value_t = 100)]
        fixed_dim: usize,
        /// Comma-separated strictly increasing sizes for the varying dimension.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Upper bound on max(N, T); the complement matrix is dense.
        #[arg(long, default_value_t = 1200)]
        dense_cap: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Fit the corrected objective across a τ list to expose sensitivity to
    /// the truncation window.
    TauSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated τ list, e.g. 0,1,2,3; overrides the config list.
        #[arg(long)]
        tau: Option<String>,
        #[arg(long = "constraint")]
        constraints: Vec<String>,
        #[arg(long)]
        kinds: Option<String>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate { config, data, out, objective, tau } => {
            run_estimate(&EstimateArgs { config, data, out, objective, tau })
        }
        Command::Test { config, data, out, objective, tau, constraints, kinds } => {
            run_test(&TestArgs { config, data, out, objective, tau, constraints, kinds })
        }
        Command::Simulate {
            design,
            n,
            t,
            reps,
            tau,
            seed,
            out,
            delta_grid,
            kinds,
            nominal,
            threads,
        } => run_simulate(&SimulateArgs {
            design,
            n,
            t,
            reps,
            tau,
            seed,
            out,
            delta_grid,
            kinds,
            nominal,
            threads,
        }),
        Command::Diagnose {
            design,
            delta,
            side,
            fixed_dim,
            grid,
            seed,
            dense_cap,
            out,
            threads,
        } => run_diagnose(&DiagnoseArgs {
            design,
            delta,
            side,
            fixed_dim,
            grid,
            seed,
            dense_cap,
            out,
            threads,
        }),
        Command::TauSweep { config, data, out, tau, constraints, kinds } => {
            run_tau_sweep(&TauSweepArgs { config, data, out, tau, constraints, kinds })
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful exits, not config errors.
            if e.use_stderr() {
                let wrapped = CliError::Config(e.to_string());
                eprintln!("{}", wrapped.to_json());
                std::process::exit(2);
            }
            e.print().expect("help output");
            std::process::exit(0);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
