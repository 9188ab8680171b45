//! Closed-loop simulation and Monte-Carlo evaluation of the computed
//! controllers, plus CSV serialization of the results.
//!
//! Reproducibility contract: every random quantity flows from one master
//! seed. Trial `i` uses a ChaCha8 generator seeded with the SplitMix64
//! stream element `mix(master + (i+1)·golden)`, so runs are bit-identical
//! across thread counts and platforms. Within a trial the draw order is
//! fixed: first `θ₀` (uniform mode), then the `n` components of `x₀`
//! (uniform in the configured box); per step, first the rule-set index
//! `σ_t`, then the `r` standard-normal noise components (Box–Muller).

use std::io::Write as IoWrite;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::{AugmentedSystem, HybridState};
use crate::det::{self, reduce_gain, SolutionTree};
use crate::error::{Error, Result};
use crate::stoch::{self, StochasticTree};

pub use crate::oracle::{oracle_brute_force, oracle_mjls, oracle_per_mode_lqr};

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream element `index` of the stream rooted at `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Deterministic random source: ChaCha8 underneath, standard normals via
/// Box–Muller with the spare value cached.
pub struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            lo
        } else {
            self.rng.gen_range(lo..hi)
        }
    }

    /// Uniform 1-based index in `[1, n]`.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.rng.gen_range(1..=n)
    }

    /// Categorical draw from a probability vector, returning a 1-based
    /// index; the final bucket absorbs rounding slack.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i + 1;
            }
        }
        probs.len()
    }

    /// Standard normal via Box–Muller: `r = √(−2 ln u₁)`, angles from `u₂`,
    /// with `u₁ ∈ (0, 1]` so the logarithm stays finite.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// One row of a simulated run. Non-terminal rows record the state at `t`
/// and the decisions taken there (`γ`, `u`, drawn rule set `σ`); the
/// terminal row carries `γ = σ = 0`, a zero input, and the terminal cost
/// in `stage_cost`.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub t: usize,
    pub theta: usize,
    pub x: Array1<f64>,
    pub gamma: usize,
    pub u: Array1<f64>,
    pub sigma: usize,
    pub stage_cost: f64,
}

/// A simulated run with its accumulated cost.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub total_cost: f64,
}

impl Trajectory {
    /// Re-derive the total cost from the recorded states and inputs alone
    /// (ignoring the stored `stage_cost` fields) — the consistency anchor
    /// for everything downstream.
    pub fn recompute_cost(&self, system: &AugmentedSystem) -> f64 {
        let plant = system.plant();
        let last = self.steps.len() - 1;
        let mut total = 0.0;
        for step in &self.steps[..last] {
            total += plant.stage_cost(step.theta, &step.x.view(), &step.u.view());
        }
        let terminal = &self.steps[last];
        total + plant.terminal_cost(terminal.theta, &terminal.x.view())
    }

    /// Largest `|x|` component over the whole run.
    pub fn max_abs_state(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.x.iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Simulate the deterministic closed loop under a fixed policy: the
/// policy's switching sequence is followed open-loop while its per-stage
/// lifted gains feed back the continuous state. Runs
/// `min(sim_horizon, T)` steps (default `T`) and closes with the terminal
/// cost at the reached state.
pub fn rollout_deterministic(
    system: &AugmentedSystem,
    policy: &det::SequenceSolution,
    state0: &HybridState,
    sim_horizon: Option<usize>,
) -> Result<Trajectory> {
    let plant = system.plant();
    let horizon = policy.sequence.len();
    let steps_n = sim_horizon.unwrap_or(horizon).min(horizon);
    let mut steps = Vec::with_capacity(steps_n + 1);
    let mut state = state0.clone();
    let mut total = 0.0;
    for t in 0..steps_n {
        let v = system.pack(&state)?;
        let u = reduce_gain(&policy.g_per_stage[t], system.n_modes()).dot(&v);
        let gamma = policy.sequence[t];
        let stage_cost = plant.stage_cost(state.theta, &state.x.view(), &u.view());
        total += stage_cost;
        steps.push(TrajectoryStep {
            t,
            theta: state.theta,
            x: state.x.clone(),
            gamma,
            u: u.clone(),
            sigma: 1,
            stage_cost,
        });
        state = HybridState {
            theta: system.succ(1, gamma, state.theta),
            x: plant.a(state.theta).dot(&state.x) + plant.b(state.theta).dot(&u),
        };
    }
    let terminal_cost = plant.terminal_cost(state.theta, &state.x.view());
    total += terminal_cost;
    steps.push(TrajectoryStep {
        t: steps_n,
        theta: state.theta,
        x: state.x,
        gamma: 0,
        u: Array1::zeros(plant.input_dim()),
        sigma: 0,
        stage_cost: terminal_cost,
    });
    Ok(Trajectory {
        steps,
        total_cost: total,
    })
}

/// Simulate the stochastic closed loop in receding horizon: at every stage
/// the controller reselects the cheapest suffix for the realized state,
/// applies its first switching input and the gain feedback, then the rule
/// set `σ_t` and the process noise are drawn from `rng`.
pub fn rollout_stochastic(
    system: &AugmentedSystem,
    tree: &StochasticTree,
    state0: &HybridState,
    rng: &mut GaussianSource,
    sim_horizon: Option<usize>,
) -> Result<Trajectory> {
    let plant = system.plant();
    if !plant.has_noise() {
        return Err(Error::Config(
            "stochastic rollout requires per-mode noise matrices F".into(),
        ));
    }
    let steps_n = sim_horizon.unwrap_or(tree.horizon()).min(tree.horizon());
    let mut steps = Vec::with_capacity(steps_n + 1);
    let mut state = state0.clone();
    let mut total = 0.0;
    for t in 0..steps_n {
        let choice = stoch::receding_step(system, tree, t, &state)?;
        let stage_cost = plant.stage_cost(state.theta, &state.x.view(), &choice.u.view());
        total += stage_cost;
        let sigma = rng.categorical(system.probs());
        let f = plant.f(state.theta).expect("checked: noise present");
        let mut w = Array1::zeros(plant.noise_dim());
        for slot in w.iter_mut() {
            *slot = rng.standard_normal();
        }
        steps.push(TrajectoryStep {
            t,
            theta: state.theta,
            x: state.x.clone(),
            gamma: choice.gamma,
            u: choice.u.clone(),
            sigma,
            stage_cost,
        });
        state = HybridState {
            theta: system.succ(sigma, choice.gamma, state.theta),
            x: plant.a(state.theta).dot(&state.x) + plant.b(state.theta).dot(&choice.u)
                + f.dot(&w),
        };
    }
    let terminal_cost = plant.terminal_cost(state.theta, &state.x.view());
    total += terminal_cost;
    steps.push(TrajectoryStep {
        t: steps_n,
        theta: state.theta,
        x: state.x,
        gamma: 0,
        u: Array1::zeros(plant.input_dim()),
        sigma: 0,
        stage_cost: terminal_cost,
    });
    Ok(Trajectory {
        steps,
        total_cost: total,
    })
}

/// Simulate the stochastic closed loop under a fixed suffix policy: the
/// policy's switching sequence and per-stage gains are followed without
/// reselection while `σ_t` and the noise are drawn from `rng`. The sample
/// mean of the realized cost estimates the policy's predicted expected
/// cost `½v₀ᵀ𝒦₀v₀ + c₀[θ₀]`.
pub fn rollout_stochastic_fixed(
    system: &AugmentedSystem,
    policy: &stoch::StochasticSolution,
    state0: &HybridState,
    rng: &mut GaussianSource,
) -> Result<Trajectory> {
    let plant = system.plant();
    if !plant.has_noise() {
        return Err(Error::Config(
            "stochastic rollout requires per-mode noise matrices F".into(),
        ));
    }
    let steps_n = policy.sequence.len();
    let mut steps = Vec::with_capacity(steps_n + 1);
    let mut state = state0.clone();
    let mut total = 0.0;
    for t in 0..steps_n {
        let v = system.pack(&state)?;
        let u = reduce_gain(&policy.g_per_stage[t], system.n_modes()).dot(&v);
        let gamma = policy.sequence[t];
        let stage_cost = plant.stage_cost(state.theta, &state.x.view(), &u.view());
        total += stage_cost;
        let sigma = rng.categorical(system.probs());
        let f = plant.f(state.theta).expect("checked: noise present");
        let mut w = Array1::zeros(plant.noise_dim());
        for slot in w.iter_mut() {
            *slot = rng.standard_normal();
        }
        steps.push(TrajectoryStep {
            t,
            theta: state.theta,
            x: state.x.clone(),
            gamma,
            u: u.clone(),
            sigma,
            stage_cost,
        });
        state = HybridState {
            theta: system.succ(sigma, gamma, state.theta),
            x: plant.a(state.theta).dot(&state.x) + plant.b(state.theta).dot(&u) + f.dot(&w),
        };
    }
    let terminal_cost = plant.terminal_cost(state.theta, &state.x.view());
    total += terminal_cost;
    steps.push(TrajectoryStep {
        t: steps_n,
        theta: state.theta,
        x: state.x,
        gamma: 0,
        u: Array1::zeros(plant.input_dim()),
        sigma: 0,
        stage_cost: terminal_cost,
    });
    Ok(Trajectory {
        steps,
        total_cost: total,
    })
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Which controller a Monte-Carlo run exercises.
pub enum McController<'a> {
    Deterministic(&'a SolutionTree),
    Stochastic(&'a StochasticTree),
}

/// Monte-Carlo run parameters. Initial continuous states are drawn
/// uniformly from `[x0_min, x0_max]ⁿ` and `θ₀` uniformly over the modes.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub trials: usize,
    pub x0_min: f64,
    pub x0_max: f64,
    pub seed: u64,
    /// Steps to simulate (clamped to the tree horizon; `None` = horizon).
    pub sim_horizon: Option<usize>,
}

/// One trial: realized cost `j` against the per-trial reference `j_star`
/// (deterministic: the selected-sequence optimum; stochastic: the
/// predicted expected cost from the drawn initial state).
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub theta0: usize,
    pub x0: Array1<f64>,
    pub j: f64,
    pub j_star: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Aggregate Monte-Carlo statistics over the cost ratios `j / j_star`.
#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub master_seed: u64,
    pub per_trial: Vec<TrialResult>,
    pub mean_ratio: f64,
    pub std_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub histogram: Vec<HistogramBin>,
    /// Largest `|x|` component seen across all trials.
    pub max_abs_state: f64,
}

impl MonteCarloReport {
    /// Standard error of the mean ratio.
    pub fn standard_error(&self) -> f64 {
        self.std_ratio / (self.trials as f64).sqrt()
    }
}

/// Run `cfg.trials` independent closed-loop simulations. Trials are
/// embarrassingly parallel and each derives its own seed, so the report
/// does not depend on the thread count.
pub fn monte_carlo(
    system: &AugmentedSystem,
    controller: McController<'_>,
    cfg: &McConfig,
) -> Result<MonteCarloReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("Monte Carlo needs at least one trial".into()));
    }
    if !(cfg.x0_min <= cfg.x0_max) {
        return Err(Error::Config(format!(
            "empty initial box [{}, {}]",
            cfg.x0_min, cfg.x0_max
        )));
    }
    let n = system.plant().state_dim();
    let n_modes = system.n_modes();
    let controller = &controller;
    let outcomes: Result<Vec<(TrialResult, f64)>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = GaussianSource::from_seed(derive_seed(cfg.seed, trial as u64));
            let theta0 = rng.uniform_index(n_modes);
            let mut x0 = Array1::zeros(n);
            for slot in x0.iter_mut() {
                *slot = rng.uniform(cfg.x0_min, cfg.x0_max);
            }
            let state = HybridState {
                theta: theta0,
                x: x0.clone(),
            };
            let (traj, j_star) = match controller {
                McController::Deterministic(tree) => {
                    let (best, value) = det::select_sequence(system, tree, &state)?;
                    let traj =
                        rollout_deterministic(system, &best, &state, cfg.sim_horizon)?;
                    (traj, value)
                }
                McController::Stochastic(tree) => {
                    let value = stoch::expected_total_cost(system, tree, &state)?;
                    let traj =
                        rollout_stochastic(system, tree, &state, &mut rng, cfg.sim_horizon)?;
                    (traj, value)
                }
            };
            let j = traj.total_cost;
            let result = TrialResult {
                trial,
                theta0,
                x0,
                j,
                j_star,
                ratio: j / j_star,
            };
            Ok((result, traj.max_abs_state()))
        })
        .collect();
    let mut max_abs_state = 0.0f64;
    let mut per_trial = Vec::with_capacity(cfg.trials);
    for (result, trial_max) in outcomes? {
        max_abs_state = max_abs_state.max(trial_max);
        per_trial.push(result);
    }
    let ratios: Vec<f64> = per_trial.iter().map(|t| t.ratio).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let var = if ratios.len() > 1 {
        ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64
    } else {
        0.0
    };
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins = 10usize;
    let span = (max - min).max(f64::MIN_POSITIVE);
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: min + span * b as f64 / bins as f64,
            hi: min + span * (b + 1) as f64 / bins as f64,
            count: 0,
        })
        .collect();
    for &r in &ratios {
        let idx = (((r - min) / span * bins as f64) as usize).min(bins - 1);
        histogram[idx].count += 1;
    }
    Ok(MonteCarloReport {
        trials: cfg.trials,
        master_seed: cfg.seed,
        per_trial,
        mean_ratio: mean,
        std_ratio: var.sqrt(),
        min_ratio: min,
        max_ratio: max,
        histogram,
        max_abs_state,
    })
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

/// Format a float with 12 significant digits — the precision used by every
/// numeric surface (stdout and CSV).
pub fn sig12(v: f64) -> String {
    format!("{v:.11e}")
}

/// Write a trajectory as CSV with header
/// `t,theta,x1..xn,gamma,u1..um,sigma,stage_cost`. Indices print as
/// integers (the terminal row uses `gamma = sigma = 0`), floats with 12
/// significant digits, rows end in LF.
pub fn write_trajectory_csv<W: IoWrite>(traj: &Trajectory, mut out: W) -> Result<()> {
    let n = traj.steps[0].x.len();
    let m = traj.steps[0].u.len();
    let mut header = String::from("t,theta");
    for i in 1..=n {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",gamma");
    for i in 1..=m {
        header.push_str(&format!(",u{i}"));
    }
    header.push_str(",sigma,stage_cost");
    writeln!(out, "{header}")?;
    for step in &traj.steps {
        let mut row = format!("{},{}", step.t, step.theta);
        for v in step.x.iter() {
            row.push_str(&format!(",{}", sig12(*v)));
        }
        row.push_str(&format!(",{}", step.gamma));
        for v in step.u.iter() {
            row.push_str(&format!(",{}", sig12(*v)));
        }
        row.push_str(&format!(",{},{}", step.sigma, sig12(step.stage_cost)));
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Write a Monte-Carlo report as CSV: per-trial rows under the header
/// `trial,theta0,x01..x0n,j,j_star,ratio`, then `summary,<name>,<value>`
/// footer rows, then `histogram,<lo>,<hi>,<count>` rows for the ratio
/// histogram.
pub fn write_report_csv<W: IoWrite>(report: &MonteCarloReport, mut out: W) -> Result<()> {
    let n = report.per_trial[0].x0.len();
    let mut header = String::from("trial,theta0");
    for i in 1..=n {
        header.push_str(&format!(",x0{i}"));
    }
    header.push_str(",j,j_star,ratio");
    writeln!(out, "{header}")?;
    for t in &report.per_trial {
        let mut row = format!("{},{}", t.trial, t.theta0);
        for v in t.x0.iter() {
            row.push_str(&format!(",{}", sig12(*v)));
        }
        row.push_str(&format!(
            ",{},{},{}",
            sig12(t.j),
            sig12(t.j_star),
            sig12(t.ratio)
        ));
        writeln!(out, "{row}")?;
    }
    writeln!(out, "summary,trials,{}", report.trials)?;
    writeln!(out, "summary,master_seed,{}", report.master_seed)?;
    writeln!(out, "summary,mean_ratio,{}", sig12(report.mean_ratio))?;
    writeln!(out, "summary,std_ratio,{}", sig12(report.std_ratio))?;
    writeln!(out, "summary,stderr_ratio,{}", sig12(report.standard_error()))?;
    writeln!(out, "summary,min_ratio,{}", sig12(report.min_ratio))?;
    writeln!(out, "summary,max_ratio,{}", sig12(report.max_ratio))?;
    writeln!(out, "summary,max_abs_state,{}", sig12(report.max_abs_state))?;
    for bin in &report.histogram {
        writeln!(
            out,
            "histogram,{},{},{}",
            sig12(bin.lo),
            sig12(bin.hi),
            bin.count
        )?;
    }
    Ok(())
}
