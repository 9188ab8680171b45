//! Cross-validation of computed solutions against independent
//! recomputations.
//!
//! Each check recomputes a quantity the solver already produced, but
//! through a different route: closed-loop simulation at the plant level
//! versus the packed quadratic value, the per-mode backward recursion
//! versus the augmented one, exhaustive rule-path enumeration versus the
//! noise-constant recursion, and — for autonomous switching — the coupled
//! Markov-jump recursion. A perturbation anywhere in a solution surfaces
//! as a reported discrepancy.

use ndarray::Array1;

use crate::augment::{AugmentedSystem, HybridState};
use crate::det::{self, reduce_gain, SequenceSolution, SolutionTree};
use crate::error::Result;
use crate::oracle::{oracle_mjls, oracle_per_mode_lqr};
use crate::sim;
use crate::stoch::{self, StochasticTree};
use crate::stp::Matrix;

/// Relative tolerance for comparisons against the independent reference
/// recursion and simulation (value triangle, coupled-recursion match).
pub const TRIANGLE_REL_TOL: f64 = 1e-9;

/// Tolerance for identities that hold to rounding error (Bellman steps,
/// gain block structure, packing, noise-path expansion).
pub const EXACT_TOL: f64 = 1e-12;

/// Result of one verification check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest discrepancy observed (relative for triangle-style checks,
    /// absolute-with-unit-floor for exact identities).
    pub max_discrepancy: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, max_discrepancy: f64, tol: f64, detail: String) -> Self {
        Self {
            name,
            passed: max_discrepancy <= tol,
            max_discrepancy,
            detail,
        }
    }
}

/// `|a − b| / max(1, |a|, |b|)` — relative with a unit floor so values
/// near zero compare absolutely.
fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Rank of the suffix obtained by dropping the first `assigned` elements
/// of the stage-`stage` suffix with the given rank.
fn tail_rank(tree_suffix_count: usize, rank: usize, m_controls: usize) -> usize {
    rank % (tree_suffix_count / m_controls)
}

// ---------------------------------------------------------------------------
// Deterministic checks
// ---------------------------------------------------------------------------

/// For every stage-0 switching sequence: the predicted value `½v₀ᵀK₀v₀`,
/// the per-mode backward recursion on the plant matrices, and the
/// simulated closed-loop cost must agree.
fn check_det_triangle(
    system: &AugmentedSystem,
    tree: &SolutionTree,
    state: &HybridState,
) -> Result<CheckOutcome> {
    let v0 = system.pack(state)?;
    let logic = &system.logic()[0];
    let mut max_d = 0.0f64;
    let count = tree.suffix_count(0);
    for rank in 0..count {
        let sequence = tree.sequence(0, rank);
        let predicted = 0.5 * v0.dot(&tree.k(0, rank).dot(&v0));
        let reference = oracle_per_mode_lqr(system.plant(), logic, state.theta, &sequence)?
            .cost(&state.x);
        let policy = SequenceSolution {
            sequence,
            k: tree.k(0, rank).clone(),
            g_per_stage: tree.gains_along(0, rank),
        };
        let simulated = sim::rollout_deterministic(system, &policy, state, None)?.total_cost;
        max_d = max_d
            .max(rel(predicted, reference))
            .max(rel(predicted, simulated))
            .max(rel(reference, simulated));
    }
    Ok(CheckOutcome::new(
        "sequence-value-triangle",
        max_d,
        TRIANGLE_REL_TOL,
        format!("{count} sequences × 3 pairwise value comparisons"),
    ))
}

/// Along the selected closed loop, `½vₜᵀKₜvₜ` must equal the realized
/// stage cost plus the next value, stage by stage, ending at the terminal
/// cost.
fn check_det_bellman(
    system: &AugmentedSystem,
    tree: &SolutionTree,
    state: &HybridState,
) -> Result<CheckOutcome> {
    let (policy, _) = det::select_sequence(system, tree, state)?;
    let traj = sim::rollout_deterministic(system, &policy, state, None)?;
    let mut rank = (0..tree.suffix_count(0))
        .find(|&r| tree.sequence(0, r) == policy.sequence)
        .expect("selected sequence exists in the tree");
    let horizon = tree.horizon();
    let mut max_d = 0.0f64;
    let mut values = Vec::with_capacity(horizon + 1);
    for (t, step) in traj.steps.iter().enumerate() {
        let v = system.pack(&HybridState {
            theta: step.theta,
            x: step.x.clone(),
        })?;
        values.push(0.5 * v.dot(&tree.k(t, rank).dot(&v)));
        if t < horizon {
            rank = tail_rank(tree.suffix_count(t), rank, tree.m_controls());
        }
    }
    for (t, step) in traj.steps.iter().enumerate().take(horizon) {
        max_d = max_d.max(rel(values[t], step.stage_cost + values[t + 1]));
    }
    let terminal = traj.steps.last().expect("rollout has a terminal row");
    max_d = max_d.max(rel(values[horizon], terminal.stage_cost));
    Ok(CheckOutcome::new(
        "bellman-step-consistency",
        max_d,
        EXACT_TOL,
        format!("{horizon} Bellman steps plus the terminal identity"),
    ))
}

/// Every per-stage gain must act block-diagonally: applying the full gain
/// to a packed state equals packing the reduced per-mode input.
fn check_gain_blocks(
    system: &AugmentedSystem,
    gains: &[Matrix],
    state: &HybridState,
) -> Result<CheckOutcome> {
    let n_modes = system.n_modes();
    let m = system.plant().input_dim();
    let mut max_d = 0.0f64;
    let mut comparisons = 0usize;
    for gain in gains {
        for theta in 1..=n_modes {
            let probe = HybridState {
                theta,
                x: state.x.clone(),
            };
            let v = system.pack(&probe)?;
            let full = gain.dot(&v);
            let reduced = reduce_gain(gain, n_modes).dot(&v);
            let mut lifted = Array1::zeros(n_modes * m);
            for (i, &u) in reduced.iter().enumerate() {
                lifted[(theta - 1) * m + i] = u;
            }
            max_d = max_d.max(
                full.iter()
                    .zip(lifted.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max),
            );
            comparisons += 1;
        }
    }
    Ok(CheckOutcome::new(
        "gain-block-structure",
        max_d,
        EXACT_TOL,
        format!("{comparisons} gain × mode lift comparisons"),
    ))
}

/// Packing a hybrid state and unpacking the result must round-trip.
fn check_pack_round_trip(system: &AugmentedSystem, state: &HybridState) -> Result<CheckOutcome> {
    let mut max_d = 0.0f64;
    for theta in 1..=system.n_modes() {
        let probe = HybridState {
            theta,
            x: state.x.clone(),
        };
        let v = system.pack(&probe)?;
        let back = system.unpack(&v.view())?;
        if back.theta != probe.theta {
            max_d = f64::INFINITY;
            continue;
        }
        max_d = max_d.max(
            probe
                .x
                .iter()
                .zip(back.x.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max),
        );
    }
    Ok(CheckOutcome::new(
        "state-pack-round-trip",
        max_d,
        EXACT_TOL,
        format!("{} modes round-tripped", system.n_modes()),
    ))
}

/// Run all deterministic checks for a computed tree at an initial state.
pub fn verify_deterministic(
    system: &AugmentedSystem,
    tree: &SolutionTree,
    state: &HybridState,
) -> Result<Vec<CheckOutcome>> {
    let (policy, _) = det::select_sequence(system, tree, state)?;
    Ok(vec![
        check_det_triangle(system, tree, state)?,
        check_det_bellman(system, tree, state)?,
        check_gain_blocks(system, &policy.g_per_stage, state)?,
        check_pack_round_trip(system, state)?,
    ])
}

// ---------------------------------------------------------------------------
// Stochastic checks
// ---------------------------------------------------------------------------

/// Noise constant of a stage-0 suffix by exhaustive rule-path enumeration:
/// sum over all `ℓ^T` rule paths of the path probability times the
/// accumulated per-step noise injections `½·tr(F_θᵀ 𝒦ₜ₊₁[s,s] F_θ)` along
/// the mode trajectory the path induces.
pub fn enumerate_noise_constant(
    system: &AugmentedSystem,
    tree: &StochasticTree,
    rank: usize,
    theta0: usize,
) -> f64 {
    let horizon = tree.horizon();
    let ell = system.ell();
    let n = system.plant().state_dim();
    let sequence = tree.sequence(0, rank);
    let probs = system.probs();
    let paths = (ell as u64).pow(horizon as u32);
    let mut total = 0.0;
    for path in 0..paths {
        let mut digits = path;
        let mut weight = 1.0;
        let mut theta = theta0;
        let mut node_rank = rank;
        let mut contribution = 0.0;
        for (t, &gamma) in sequence.iter().enumerate() {
            let sigma = (digits % ell as u64) as usize + 1;
            digits /= ell as u64;
            weight *= probs[sigma - 1];
            let succ = system.succ(sigma, gamma, theta);
            let next_rank = tail_rank(tree.suffix_count(t), node_rank, tree.m_controls());
            let k_next = tree.k(t + 1, next_rank);
            if let Some(f) = system.plant().f(theta) {
                let block = k_next.slice(ndarray::s![
                    (succ - 1) * n..succ * n,
                    (succ - 1) * n..succ * n
                ]);
                let prod = f.t().dot(&block).dot(f);
                contribution += 0.5 * prod.diag().sum();
            }
            theta = succ;
            node_rank = next_rank;
        }
        total += weight * contribution;
    }
    total
}

/// The recursively computed noise constants must equal the exhaustive
/// rule-path expansion, for every stage-0 suffix and every initial mode.
fn check_noise_paths(system: &AugmentedSystem, tree: &StochasticTree) -> Result<CheckOutcome> {
    let mut max_d = 0.0f64;
    let count = tree.suffix_count(0);
    let n_modes = system.n_modes();
    for rank in 0..count {
        for theta in 1..=n_modes {
            let recursive = tree.c(0, rank)[theta - 1];
            let expanded = enumerate_noise_constant(system, tree, rank, theta);
            max_d = max_d.max(rel(recursive, expanded));
        }
    }
    Ok(CheckOutcome::new(
        "noise-constant-path-expansion",
        max_d,
        EXACT_TOL,
        format!("{count} sequences × {n_modes} modes expanded exhaustively"),
    ))
}

/// Along a realized closed loop, the expected one-step identity
/// `½vᵀ𝒦ₜv = stage cost + Σ_σ p_σ · ½v′(σ)ᵀ𝒦ₜ₊₁v′(σ)` must hold, with
/// the successor states recomputed from the per-mode plant matrices.
fn check_stoch_bellman(
    system: &AugmentedSystem,
    tree: &StochasticTree,
    state: &HybridState,
) -> Result<CheckOutcome> {
    let plant = system.plant();
    let (policy, value0) = stoch::select_stochastic(system, tree, state)?;
    let rank0 = (0..tree.suffix_count(0))
        .find(|&r| tree.sequence(0, r) == policy.sequence)
        .expect("selected sequence exists in the tree");
    let mut max_d = 0.0f64;
    let mut current = state.clone();
    let mut rank = rank0;
    let v0 = system.pack(state)?;
    max_d = max_d.max(rel(
        value0,
        0.5 * v0.dot(&tree.k(0, rank0).dot(&v0)) + tree.c(0, rank0)[state.theta - 1],
    ));
    for (t, &gamma) in policy.sequence.iter().enumerate() {
        let v = system.pack(&current)?;
        let u = reduce_gain(&policy.g_per_stage[t], system.n_modes()).dot(&v);
        let quad_here = 0.5 * v.dot(&tree.k(t, rank).dot(&v));
        let stage = plant.stage_cost(current.theta, &current.x.view(), &u.view());
        let next_rank = tail_rank(tree.suffix_count(t), rank, tree.m_controls());
        let x_next = plant.a(current.theta).dot(&current.x) + plant.b(current.theta).dot(&u);
        let mut expected_next = 0.0;
        for (sigma, &p) in system.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let succ = system.succ(sigma + 1, gamma, current.theta);
            let v_next = system.pack(&HybridState {
                theta: succ,
                x: x_next.clone(),
            })?;
            expected_next += p * 0.5 * v_next.dot(&tree.k(t + 1, next_rank).dot(&v_next));
        }
        max_d = max_d.max(rel(quad_here, stage + expected_next));
        // Advance along the noise-free trajectory with the most likely rule set.
        let argmax_sigma = system
            .probs()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i + 1)
            .expect("nonempty distribution");
        current = HybridState {
            theta: system.succ(argmax_sigma, gamma, current.theta),
            x: x_next,
        };
        rank = next_rank;
    }
    Ok(CheckOutcome::new(
        "expected-bellman-step",
        max_d,
        EXACT_TOL,
        format!("{} expected one-step identities", policy.sequence.len()),
    ))
}

/// With the switching input absent (`M = 1`) the stochastic recursion is a
/// finite-horizon Markov jump linear control problem; compare against the
/// coupled per-mode recursion.
fn check_mjls(system: &AugmentedSystem, tree: &StochasticTree) -> Result<CheckOutcome> {
    let plant = system.plant();
    let n_modes = system.n_modes();
    let n = plant.state_dim();
    let m = plant.input_dim();
    let mut transition = Matrix::zeros((n_modes, n_modes));
    for theta in 1..=n_modes {
        for (sigma, &p) in system.probs().iter().enumerate() {
            let succ = system.succ(sigma + 1, 1, theta);
            transition[[theta - 1, succ - 1]] += p;
        }
    }
    let horizon = tree.horizon();
    let reference = oracle_mjls(plant, &transition, horizon)?;
    let mut max_d = 0.0f64;
    for t in 0..=horizon {
        let k = tree.k(t, 0);
        for mode in 1..=n_modes {
            let block = k.slice(ndarray::s![(mode - 1) * n..mode * n, (mode - 1) * n..mode * n]);
            for (a, b) in block.iter().zip(reference.k[t][mode - 1].iter()) {
                max_d = max_d.max(rel(*a, *b));
            }
            max_d = max_d.max(rel(tree.c(t, 0)[mode - 1], reference.c[t][mode - 1]));
            if t < horizon {
                let gain = tree.gain(t, 0);
                let gblock = gain.slice(ndarray::s![
                    (mode - 1) * m..mode * m,
                    (mode - 1) * n..mode * n
                ]);
                for (a, b) in gblock.iter().zip(reference.gains[t][mode - 1].iter()) {
                    max_d = max_d.max(rel(*a, -*b));
                }
            }
        }
    }
    Ok(CheckOutcome::new(
        "markov-jump-coupled-recursion",
        max_d,
        TRIANGLE_REL_TOL,
        format!("{n_modes} coupled cost matrices, gains, and constants per stage"),
    ))
}

/// Run all stochastic checks for a computed tree at an initial state.
/// The Markov-jump comparison runs only when there is no switching input
/// (`M = 1`), where the coupled reference recursion applies.
pub fn verify_stochastic(
    system: &AugmentedSystem,
    tree: &StochasticTree,
    state: &HybridState,
) -> Result<Vec<CheckOutcome>> {
    let (policy, _) = stoch::select_stochastic(system, tree, state)?;
    let mut outcomes = vec![
        check_noise_paths(system, tree)?,
        check_stoch_bellman(system, tree, state)?,
        check_gain_blocks(system, &policy.g_per_stage, state)?,
        check_pack_round_trip(system, state)?,
    ];
    if system.m_controls() == 1 {
        outcomes.push(check_mjls(system, tree)?);
    }
    Ok(outcomes)
}
