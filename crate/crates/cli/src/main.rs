//! `safe-mdp`: validate, evaluate, solve and simulate safety-constrained
//! absorbing MDPs from JSON model files.

mod commands;
mod error;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{Mode, SimulateParams, SolveParams};
use error::CliError;
use report::{Output, RunReport};

/// Environment variable capping the number of worker threads.
const THREADS_VAR: &str = "SAFE_MDP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "safe-mdp", version, about = "Safety-constrained absorbing MDP toolkit")]
struct Cli {
    /// Print the result table as CSV instead of the JSON report.
    #[arg(long, global = true)]
    csv: bool,

    /// Add wall-clock timings to the report (makes reruns differ).
    #[arg(long, global = true)]
    timings: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model file and list every violated invariant.
    Validate { model: PathBuf },

    /// Value, safety, reach and Green matrix of a fixed policy.
    Eval { model: PathBuf, policy: PathBuf },

    /// Optimise, optionally under a safety bound.
    Solve {
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Safety level: bound on the probability of hitting a forbidden state.
        #[arg(long)]
        p: Option<f64>,
        /// Relative safety ratio for `--mode relative`.
        #[arg(long)]
        q: Option<f64>,
        /// Stopping tolerance of the fixed-point iterations.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        /// Recorded in the report; every solver is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest number of pure policies to enumerate.
        #[arg(long, default_value_t = safe_mdp::safe::DEFAULT_CAP)]
        cap: u64,
        /// Compare against the best pure policy found by enumeration.
        #[arg(long)]
        oracle: bool,
        /// Write the linear programs (and their solution) to this file.
        #[arg(long, value_name = "PATH")]
        dump_lp: Option<PathBuf>,
    },

    /// Monte Carlo estimates next to the closed-form values.
    Simulate {
        model: PathBuf,
        policy: PathBuf,
        /// Taboo state the trajectories start from.
        #[arg(long)]
        start: String,
        /// Number of trajectories.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectories still running after this many steps are counted as
        /// truncated and left out of the estimates.
        #[arg(long, default_value_t = safe_mdp::sim::DEFAULT_MAX_STEPS)]
        max_steps: usize,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))
}

fn run(command: &Command, inputs: &mut Vec<report::InputFile>) -> Result<Output, CliError> {
    configure_threads()?;
    match command {
        Command::Validate { model } => commands::validate(model, inputs),
        Command::Eval { model, policy } => commands::eval(model, policy, inputs),
        Command::Solve {
            model,
            mode,
            p,
            q,
            tol,
            seed,
            cap,
            oracle,
            dump_lp,
        } => {
            let params = SolveParams {
                mode: *mode,
                p: *p,
                q: *q,
                tol: *tol,
                seed: *seed,
                cap: *cap,
                oracle: *oracle,
                dump_lp: dump_lp.clone(),
            };
            commands::solve(model, &params, inputs)
        }
        Command::Simulate {
            model,
            policy,
            start,
            n,
            seed,
            max_steps,
        } => {
            let params = SimulateParams {
                start: start.clone(),
                n: *n,
                seed: *seed,
                max_steps: *max_steps,
            };
            commands::simulate(model, policy, &params, inputs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let mut inputs = Vec::new();
    let outcome = run(&cli.command, &mut inputs);
    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut report = RunReport {
        command: std::env::args().skip(1).collect(),
        inputs,
        results: None,
        error: None,
        exit_code: 0,
        timings: cli.timings.then(|| json!({ "total_ms": elapsed_ms })),
    };
    let mut table = None;
    match outcome {
        Ok(out) => {
            report.results = Some(out.results);
            table = out.table;
        }
        Err(e) => {
            eprintln!("safe-mdp: {e}");
            report.exit_code = e.exit_code();
            report.results = e.results().cloned();
            report.error = Some(e.to_json());
        }
    }

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let written = match (cli.csv, table) {
        (true, Some(t)) => t.write_csv(&mut out).map_err(std::io::Error::from),
        (true, None) => Ok(()),
        (false, _) => writeln!(out, "{}", report.render()),
    };
    if let Err(e) = written {
        eprintln!("safe-mdp: cannot write output: {e}");
        return ExitCode::from(3);
    }
    ExitCode::from(report.exit_code)
}
