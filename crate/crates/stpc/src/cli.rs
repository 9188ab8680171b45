//! Command-line interface: config-driven dispatch over the compiler,
//! solvers, simulator, and verification checks.
//!
//! All numeric output uses 12 significant digits. CSV goes to the path
//! given by `--output` (or the config's `[output]` block); without a path
//! the CSV streams to stdout and the human-readable summary moves to
//! stderr so the data stays machine-readable. Exit codes: 0 success,
//! 2 configuration error, 3 numerical guard or verification failure,
//! 4 I/O error.

use std::fs::File;
use std::io::{self, BufWriter, Write as IoWrite};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, ArrayView2};

use crate::augment::{AugmentedSystem, HybridState};
use crate::config::Problem;
use crate::det;
use crate::error::{Error, Result};
use crate::sim::{self, sig12, GaussianSource, McController};
use crate::stoch;
use crate::verify;

/// Cap the global thread pool from the `STPC_THREADS` environment
/// variable. Call once, before any parallel work.
pub fn configure_threads() {
    if let Ok(value) = std::env::var("STPC_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "stpc",
    version,
    about = "Joint optimal control of switched linear plants driven by logical networks"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile the network into structure matrices and print them.
    Compile(CompileArgs),
    /// Solve the deterministic joint control problem.
    SolveDet(SolveArgs),
    /// Solve the stochastic joint control problem.
    SolveStoch(SolveArgs),
    /// Simulate one closed-loop run and export the trajectory CSV.
    Simulate(SimulateArgs),
    /// Run seeded Monte-Carlo trials and export the report CSV.
    Montecarlo(MontecarloArgs),
    /// Cross-validate the computed solution against independent checks.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CompileArgs {
    /// Problem configuration (TOML).
    config: PathBuf,
    /// Write a config copy with rules replaced by explicit matrices.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Problem configuration (TOML).
    config: PathBuf,
    /// Initial hybrid state: joint 1-based mode index then x components,
    /// e.g. --state "1 5.0 -3.0 2.0" (overrides the config's [initial]).
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
    /// Print every precomputed cost matrix and gain, stage by stage.
    #[arg(long)]
    dump_tree: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Problem configuration (TOML).
    config: PathBuf,
    /// Use the stochastic receding-horizon controller.
    #[arg(long)]
    stochastic: bool,
    /// Master seed for the rule-set and noise draws (stochastic runs).
    #[arg(long)]
    seed: Option<u64>,
    /// Steps to simulate (defaults to the horizon; clamped to it).
    #[arg(long)]
    steps: Option<usize>,
    /// Trajectory CSV path (default: [output].trajectory, else stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Initial hybrid state override, as in solve-det.
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
}

#[derive(Args)]
struct MontecarloArgs {
    /// Problem configuration (TOML).
    config: PathBuf,
    /// Report CSV path (default: [output].report, else stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Problem configuration (TOML).
    config: PathBuf,
    /// Initial hybrid state override, as in solve-det.
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compile(args) => cmd_compile(args),
        Command::SolveDet(args) => cmd_solve_det(args),
        Command::SolveStoch(args) => cmd_solve_stoch(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Montecarlo(args) => cmd_montecarlo(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Parse "--state θ x1 .. xn" (joint 1-based mode index, then n floats).
fn parse_state(text: &str, n_modes: usize, n: usize) -> Result<HybridState> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != n + 1 {
        return Err(Error::Config(format!(
            "--state needs 1 mode index and {n} state components, found {} values",
            parts.len()
        )));
    }
    let theta: usize = parts[0]
        .parse()
        .map_err(|_| Error::Config(format!("--state mode index `{}` is not an integer", parts[0])))?;
    if theta == 0 || theta > n_modes {
        return Err(Error::Config(format!(
            "--state mode index {theta} outside [1, {n_modes}]"
        )));
    }
    let mut x = Array1::zeros(n);
    for (slot, part) in x.iter_mut().zip(&parts[1..]) {
        *slot = part
            .parse()
            .map_err(|_| Error::Config(format!("--state component `{part}` is not a number")))?;
    }
    Ok(HybridState { theta, x })
}

/// The initial state: the `--state` flag when given, else the config's
/// `[initial]` block.
fn resolve_state(
    problem: &Problem,
    system: &AugmentedSystem,
    flag: Option<&str>,
) -> Result<HybridState> {
    match flag {
        Some(text) => parse_state(text, system.n_modes(), system.plant().state_dim()),
        None => problem.initial_state(),
    }
}

fn print_matrix_rows<W: IoWrite>(out: &mut W, m: &ArrayView2<f64>) -> Result<()> {
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| sig12(*v)).collect();
        writeln!(out, "  {}", cells.join(" "))?;
    }
    Ok(())
}

fn join_indices(seq: &[usize]) -> String {
    seq.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Print a per-stage lifted gain as its per-mode `m×n` feedback blocks.
fn print_gain_blocks<W: IoWrite>(
    out: &mut W,
    system: &AugmentedSystem,
    t: usize,
    gain: &crate::stp::Matrix,
) -> Result<()> {
    let n = system.plant().state_dim();
    let m = system.plant().input_dim();
    for theta in 1..=system.n_modes() {
        writeln!(out, "gain[t={t}, mode={theta}]:")?;
        let block = gain.slice(ndarray::s![
            (theta - 1) * m..theta * m,
            (theta - 1) * n..theta * n
        ]);
        print_matrix_rows(out, &block)?;
    }
    Ok(())
}

/// CSV sink selection: explicit flag, else config default, else stdout.
/// Returns a writer plus a summary channel (stdout normally, stderr when
/// the CSV itself occupies stdout).
fn open_sink(
    flag: Option<PathBuf>,
    config_default: Option<&str>,
) -> Result<(Box<dyn IoWrite>, Box<dyn IoWrite>)> {
    let path = flag.or_else(|| config_default.map(PathBuf::from));
    match path {
        Some(path) => {
            let file = File::create(&path)
                .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
            Ok((
                Box::new(BufWriter::new(file)),
                Box::new(io::stdout().lock()),
            ))
        }
        None => Ok((
            Box::new(io::stdout().lock()),
            Box::new(io::stderr().lock()),
        )),
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_compile(args: CompileArgs) -> Result<()> {
    let problem = Problem::load(&args.config)?;
    let out = io::stdout();
    let mut out = out.lock();
    let ell = problem.logic.ell();
    for (i, matrix) in problem.logic.matrices.iter().enumerate() {
        let label = if ell == 1 {
            "L".to_string()
        } else {
            format!("L{}", i + 1)
        };
        writeln!(
            out,
            "{label} ({}x{}), columns: [{}]",
            matrix.rows(),
            matrix.cols(),
            join_indices(matrix.col_indices())
        )?;
        writeln!(out, "{label} dense:")?;
        print_matrix_rows(&mut out, &matrix.to_dense().view())?;
    }
    if let Some(path) = args.output {
        let rewritten = problem.with_matrix_rules()?;
        let file = File::create(&path)
            .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mut file = BufWriter::new(file);
        file.write_all(rewritten.to_toml()?.as_bytes())?;
        file.flush()?;
        writeln!(out, "wrote matrix-rule config to {}", path.display())?;
    }
    Ok(())
}

fn cmd_solve_det(args: SolveArgs) -> Result<()> {
    let problem = Problem::load(&args.config)?;
    if problem.logic.matrices.len() > 1 {
        return Err(Error::Config(
            "configuration defines multiple rule sets; use solve-stoch for stochastic networks"
                .into(),
        ));
    }
    let system = problem.deterministic_system()?;
    let state = resolve_state(&problem, &system, args.state.as_deref())?;
    let horizon = problem.config.horizon.steps;
    let solution = det::solve(
        &system,
        horizon,
        &state,
        problem.config.horizon.max_sequences,
    )?;
    let out = io::stdout();
    let mut out = out.lock();
    writeln!(out, "sequence: {}", join_indices(&solution.best.sequence))?;
    writeln!(out, "J_min: {}", sig12(solution.value))?;
    for (t, gain) in solution.best.g_per_stage.iter().enumerate() {
        print_gain_blocks(&mut out, &system, t, gain)?;
    }
    if args.dump_tree {
        writeln!(out, "tree:")?;
        for t in 0..horizon {
            writeln!(
                out,
                "stage {t}: {} suffixes",
                solution.tree.suffix_count(t)
            )?;
            for rank in 0..solution.tree.suffix_count(t) {
                writeln!(
                    out,
                    "suffix {}",
                    join_indices(&solution.tree.sequence(t, rank))
                )?;
                writeln!(out, "K:")?;
                print_matrix_rows(&mut out, &solution.tree.k(t, rank).view())?;
                writeln!(out, "G:")?;
                print_matrix_rows(&mut out, &solution.tree.gain(t, rank).view())?;
            }
        }
    }
    Ok(())
}

fn cmd_solve_stoch(args: SolveArgs) -> Result<()> {
    let problem = Problem::load(&args.config)?;
    let system = problem.stochastic_system()?;
    let state = resolve_state(&problem, &system, args.state.as_deref())?;
    let horizon = problem.config.horizon.steps;
    let solution = stoch::solve_stochastic(
        &system,
        horizon,
        &state,
        problem.config.horizon.max_sequences,
    )?;
    let out = io::stdout();
    let mut out = out.lock();
    writeln!(out, "sequence: {}", join_indices(&solution.best.sequence))?;
    writeln!(out, "J_expected: {}", sig12(solution.value))?;
    writeln!(
        out,
        "noise_constant: {}",
        sig12(solution.best.c[state.theta - 1])
    )?;
    for (t, gain) in solution.best.g_per_stage.iter().enumerate() {
        print_gain_blocks(&mut out, &system, t, gain)?;
    }
    if args.dump_tree {
        writeln!(out, "tree:")?;
        for t in 0..horizon {
            writeln!(
                out,
                "stage {t}: {} suffixes",
                solution.tree.suffix_count(t)
            )?;
            for rank in 0..solution.tree.suffix_count(t) {
                writeln!(
                    out,
                    "suffix {}",
                    join_indices(&solution.tree.sequence(t, rank))
                )?;
                writeln!(out, "K:")?;
                print_matrix_rows(&mut out, &solution.tree.k(t, rank).view())?;
                writeln!(out, "G:")?;
                print_matrix_rows(&mut out, &solution.tree.gain(t, rank).view())?;
                let constants: Vec<String> =
                    solution.tree.c(t, rank).iter().map(|v| sig12(*v)).collect();
                writeln!(out, "c: [{}]", constants.join(", "))?;
            }
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let problem = Problem::load(&args.config)?;
    let horizon = problem.config.horizon.steps;
    let cap = problem.config.horizon.max_sequences;
    let trajectory_default = problem
        .config
        .output
        .as_ref()
        .and_then(|o| o.trajectory.as_deref());
    let (mut csv, mut summary) = open_sink(args.output.clone(), trajectory_default)?;
    let traj = if args.stochastic {
        let system = problem.stochastic_system()?;
        let state = resolve_state(&problem, &system, args.state.as_deref())?;
        let tree = stoch::precompute_stochastic(&system, horizon, cap)?;
        let seed = args
            .seed
            .or_else(|| problem.config.montecarlo.as_ref().map(|m| m.seed))
            .unwrap_or(0);
        writeln!(summary, "seed: {seed}")?;
        let predicted = stoch::expected_total_cost(&system, &tree, &state)?;
        writeln!(summary, "J_expected: {}", sig12(predicted))?;
        let mut rng = GaussianSource::from_seed(seed);
        sim::rollout_stochastic(&system, &tree, &state, &mut rng, args.steps)?
    } else {
        if problem.logic.matrices.len() > 1 {
            return Err(Error::Config(
                "configuration defines multiple rule sets; pass --stochastic to simulate the receding-horizon controller".into(),
            ));
        }
        let system = problem.deterministic_system()?;
        let state = resolve_state(&problem, &system, args.state.as_deref())?;
        let tree = det::precompute_tree(&system, horizon, cap)?;
        let (policy, value) = det::select_sequence(&system, &tree, &state)?;
        writeln!(summary, "sequence: {}", join_indices(&policy.sequence))?;
        writeln!(summary, "J_min: {}", sig12(value))?;
        sim::rollout_deterministic(&system, &policy, &state, args.steps)?
    };
    writeln!(summary, "total_cost: {}", sig12(traj.total_cost))?;
    sim::write_trajectory_csv(&traj, &mut csv)?;
    csv.flush()?;
    summary.flush()?;
    Ok(())
}

fn cmd_montecarlo(args: MontecarloArgs) -> Result<()> {
    let problem = Problem::load(&args.config)?;
    let horizon = problem.config.horizon.steps;
    let cap = problem.config.horizon.max_sequences;
    let cfg = problem.mc_config()?;
    let report_default = problem
        .config
        .output
        .as_ref()
        .and_then(|o| o.report.as_deref());
    let (mut csv, mut summary) = open_sink(args.output.clone(), report_default)?;
    let stochastic = problem
        .plant
        .as_ref()
        .map(|p| p.has_noise())
        .unwrap_or(false);
    let report = if stochastic {
        let system = problem.stochastic_system()?;
        let tree = stoch::precompute_stochastic(&system, horizon, cap)?;
        sim::monte_carlo(&system, McController::Stochastic(&tree), &cfg)?
    } else {
        let system = problem.deterministic_system()?;
        let tree = det::precompute_tree(&system, horizon, cap)?;
        sim::monte_carlo(&system, McController::Deterministic(&tree), &cfg)?
    };
    writeln!(summary, "trials: {}", report.trials)?;
    writeln!(summary, "master_seed: {}", report.master_seed)?;
    writeln!(summary, "mean_ratio: {}", sig12(report.mean_ratio))?;
    writeln!(summary, "std_ratio: {}", sig12(report.std_ratio))?;
    writeln!(summary, "stderr_ratio: {}", sig12(report.standard_error()))?;
    writeln!(summary, "min_ratio: {}", sig12(report.min_ratio))?;
    writeln!(summary, "max_ratio: {}", sig12(report.max_ratio))?;
    writeln!(summary, "max_abs_state: {}", sig12(report.max_abs_state))?;
    sim::write_report_csv(&report, &mut csv)?;
    csv.flush()?;
    summary.flush()?;
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    let problem = Problem::load(&args.config)?;
    let horizon = problem.config.horizon.steps;
    let cap = problem.config.horizon.max_sequences;
    let has_noise = problem
        .plant
        .as_ref()
        .map(|p| p.has_noise())
        .unwrap_or(false);
    let mut outcomes = Vec::new();
    if problem.logic.ell() == 1 {
        let system = problem.deterministic_system()?;
        let state = resolve_state(&problem, &system, args.state.as_deref())?;
        let tree = det::precompute_tree(&system, horizon, cap)?;
        outcomes.extend(verify::verify_deterministic(&system, &tree, &state)?);
    }
    if has_noise {
        let system = problem.stochastic_system()?;
        let state = resolve_state(&problem, &system, args.state.as_deref())?;
        let tree = stoch::precompute_stochastic(&system, horizon, cap)?;
        outcomes.extend(verify::verify_stochastic(&system, &tree, &state)?);
    }
    if outcomes.is_empty() {
        return Err(Error::Config(
            "nothing to verify: stochastic networks need noise matrices".into(),
        ));
    }
    let out = io::stdout();
    let mut out = out.lock();
    let mut failed = 0usize;
    let mut worst = 0.0f64;
    for outcome in &outcomes {
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "{status} {} (max discrepancy {}; {})",
            outcome.name,
            sig12(outcome.max_discrepancy),
            outcome.detail
        )?;
        if !outcome.passed {
            failed += 1;
            worst = worst.max(outcome.max_discrepancy);
        }
    }
    if failed > 0 {
        return Err(Error::VerificationFailed {
            failed,
            max_discrepancy: worst,
        });
    }
    Ok(())
}
