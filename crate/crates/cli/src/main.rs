use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plap_cli::{run, Experiment, ExperimentConfig, Failure, Overrides};

/// Solver and verification lab for regularized p-Laplacian Dirichlet systems.
///
/// Exit codes: 0 success, 1 numerical non-convergence or failed check,
/// 2 invalid configuration.
#[derive(Parser)]
#[command(name = "plap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Damped fixed-point solve; writes the solution dump and iteration trace.
    Solve(Flags),
    /// Energy minimization on the variational discretization (μ = 0 allowed).
    Oracle(Flags),
    /// Empirical C₁, C₂(q), C₃(q) on the configured grid.
    Constants(Flags),
    /// Randomized sweeps of the pointwise inequalities.
    Inequalities(Flags),
    /// Solves along a decreasing μ schedule and compares with the μ = 0 oracle.
    Continuation(Flags),
    /// Manufactured-solution refinement study over --grids.
    Mms(Flags),
    /// Collects the summaries of earlier runs into one CSV.
    Report {
        /// Output directories of earlier runs.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(clap::Args)]
struct Flags {
    /// JSON configuration file or a manifest of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Points per axis of each refinement level, e.g. 17,33,65.
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    /// Points per axis of the grid.
    #[arg(long)]
    points: Option<usize>,
    /// Spatial dimension, 2 or 3.
    #[arg(long)]
    dims: Option<usize>,
    /// Samples per inequality sweep, or per constants estimate.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    picard_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    oracle_tol: Option<f64>,
    /// constants.json of an earlier `constants` run.
    #[arg(long)]
    constants: Option<PathBuf>,
    /// Exponents tabulated by `constants`, e.g. 2,4,8,16.
    #[arg(long, value_delimiter = ',')]
    qs: Option<Vec<f64>>,
    /// Decreasing μ values, e.g. 1e-1,1e-2,1e-3.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu_schedule: Option<Vec<f64>>,
    /// Per-component amplitudes of the data or exact solution.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    amplitudes: Option<Vec<f64>>,
    /// Field dump to use as data.
    #[arg(long)]
    dump: Option<PathBuf>,
}

impl Flags {
    fn overrides(&self, inputs: Option<Vec<PathBuf>>) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            p: self.p,
            mu: self.mu,
            q: self.q,
            grids: self.grids.clone(),
            points: self.points,
            dims: self.dims,
            samples: self.samples,
            picard_tol: self.picard_tol,
            max_iters: self.max_iters,
            oracle_tol: self.oracle_tol,
            constants: self.constants.clone(),
            qs: self.qs.clone(),
            mu_schedule: self.mu_schedule.clone(),
            amplitudes: self.amplitudes.clone(),
            dump: self.dump.clone(),
            inputs,
        }
    }
}

fn execute(command: Command) -> Result<(Experiment, PathBuf), Failure> {
    let (experiment, flags, inputs) = match command {
        Command::Solve(f) => (Experiment::Solve, f, None),
        Command::Oracle(f) => (Experiment::Oracle, f, None),
        Command::Constants(f) => (Experiment::Constants, f, None),
        Command::Inequalities(f) => (Experiment::Inequalities, f, None),
        Command::Continuation(f) => (Experiment::Continuation, f, None),
        Command::Mms(f) => (Experiment::Mms, f, None),
        Command::Report { inputs, flags } => (Experiment::Report, flags, Some(inputs)),
    };
    let mut cfg = match &flags.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(experiment, &flags.overrides(inputs));
    run(experiment, &cfg)?;
    Ok((experiment, cfg.out))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok((experiment, out)) => {
            println!("{}: ok, artifacts in {}", experiment.name(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("plap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
