//! Joint optimal control under randomly switched logical dynamics: the
//! backward recursion averages over the rule-set draw `σ_t ∼ (p₁..p_ℓ)`
//! and carries additive constants for the process noise.
//!
//! For a control choice `γ` and next-stage cost `𝒦⁺`, define the
//! expectation contraction `EQ(X, Y) = Σᵢ pᵢ X̃ᵢᵀ 𝒦⁺ Ỹᵢ` over the per-σ
//! column blocks of the lifted matrices. The cost recursion is
//!
//! `𝒦 = 𝐂 + 𝒢ᵀ𝐃𝒢 + EQ(Ã,Ã) + EQ(Ã,B̃)𝒢 + 𝒢ᵀEQ(B̃,Ã) + 𝒢ᵀEQ(B̃,B̃)𝒢`,
//!
//! with the lifted gain built per mode block against the averaged
//! successor block `Ẽ_θ = Σᵢ pᵢ 𝒦⁺[sᵢ, sᵢ]`, `sᵢ = succ(σ=i, γ, θ)` —
//! exactly the coupled-Riccati expectation of a Markov jump system whose
//! transition kernel is induced by the rule-set distribution.
//!
//! Noise enters additively (`x⁺ = Ax + Bu + Fw`, `w ∼ 𝒩(0, I_r)`) and
//! never disturbs gains or quadratic terms; it accumulates per-mode
//! constants `c_t[θ] = Σᵢ pᵢ (½ tr(F_θᵀ 𝒦⁺[sᵢ,sᵢ] F_θ) + c_{t+1}[sᵢ])`
//! with `c_T = 0`, so the predicted expected cost from `(θ₀, x₀)` is
//! `½ v₀ᵀ 𝒦₀ v₀ + c₀[θ₀]`.
//!
//! Suffix bookkeeping (ranks, stages, caps, lexicographic ties) mirrors
//! the deterministic tree; the intended use is receding horizon — apply
//! the first element of the selected suffix, observe the realized mode,
//! reselect at the next stage.

use ndarray::{s, Array1};
use rayon::prelude::*;

use crate::augment::{AugmentedSystem, HybridState};
use crate::det::{gain_from_blocks, reduce_gain, COST_PSD_TOL};
use crate::error::{Error, Result};
use crate::linalg::{min_symmetric_eigenvalue, symmetrize};
use crate::stp::Matrix;

#[derive(Debug, Clone)]
struct StochNode {
    k: Matrix,
    gain: Matrix,
    c: Vec<f64>,
}

/// Backward-recursion results for every switching suffix of a randomly
/// switched system; stage `t` holds `M^{T−t}` rank-indexed nodes.
#[derive(Debug, Clone)]
pub struct StochasticTree {
    stages: Vec<Vec<StochNode>>,
    horizon: usize,
    m_controls: usize,
}

/// Selected plan at stage 0: sequence, cost matrix, noise constants, gains.
#[derive(Debug, Clone)]
pub struct StochasticSolution {
    pub sequence: Vec<usize>,
    pub k: Matrix,
    /// Per-mode additive noise constants at stage 0.
    pub c: Vec<f64>,
    pub g_per_stage: Vec<Matrix>,
}

/// Everything `solve_stochastic` produces.
#[derive(Debug, Clone)]
pub struct StochSolution {
    pub tree: StochasticTree,
    pub best: StochasticSolution,
    /// Predicted expected cost `½ v₀ᵀ 𝒦₀ v₀ + c₀[θ₀]`.
    pub value: f64,
}

/// One receding-horizon decision: the suffix chosen at the current stage
/// and the physical input to apply now.
#[derive(Debug, Clone)]
pub struct RecedingChoice {
    pub rank: usize,
    /// Remaining planned sequence `γ_t..γ_{T−1}`.
    pub sequence: Vec<usize>,
    /// First element of the sequence — the control to apply.
    pub gamma: usize,
    /// Physical input `u = 𝐆 v` for the current lifted state.
    pub u: Array1<f64>,
    /// Predicted expected cost-to-go `½ vᵀ 𝒦 v + c[θ]`.
    pub value: f64,
}

impl StochasticTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn m_controls(&self) -> usize {
        self.m_controls
    }

    pub fn suffix_count(&self, stage: usize) -> usize {
        self.stages[stage].len()
    }

    pub fn k(&self, stage: usize, rank: usize) -> &Matrix {
        &self.stages[stage][rank].k
    }

    pub fn gain(&self, stage: usize, rank: usize) -> &Matrix {
        &self.stages[stage][rank].gain
    }

    /// Per-mode noise constants of suffix `rank` at stage `t`.
    pub fn c(&self, stage: usize, rank: usize) -> &[f64] {
        &self.stages[stage][rank].c
    }

    /// Mutable cost access for diagnostics (perturbation injection).
    pub fn k_mut(&mut self, stage: usize, rank: usize) -> &mut Matrix {
        &mut self.stages[stage][rank].k
    }

    pub fn sequence(&self, stage: usize, rank: usize) -> Vec<usize> {
        let mut seq = vec![1usize; self.horizon - stage];
        let mut rem = rank;
        for slot in seq.iter_mut().rev() {
            *slot = rem % self.m_controls + 1;
            rem /= self.m_controls;
        }
        seq
    }

    pub fn gains_along(&self, stage: usize, rank: usize) -> Vec<Matrix> {
        let mut out = Vec::with_capacity(self.horizon - stage);
        let mut r = rank;
        for t in stage..self.horizon {
            let width = self.stages[t].len();
            r %= width;
            out.push(self.stages[t][r].gain.clone());
        }
        out
    }
}

/// Expectation contraction `Σᵢ pᵢ X̃ᵢᵀ 𝒦⁺ Ỹᵢ` over the `(σ=i, γ)` column
/// blocks of two lifted matrices (pass `a_aug`/`b_aug`/`f_aug`).
pub fn expected_quadratic(
    system: &AugmentedSystem,
    k_next: &Matrix,
    x: &Matrix,
    y: &Matrix,
    gamma: usize,
) -> Matrix {
    let slots = system.ell() * system.m_controls();
    let xw = x.ncols() / slots;
    let yw = y.ncols() / slots;
    let mut out = Matrix::zeros((xw, yw));
    for (i, &p) in system.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let at_x = (i * system.m_controls() + (gamma - 1)) * xw;
        let at_y = (i * system.m_controls() + (gamma - 1)) * yw;
        let xs = x.slice(s![.., at_x..at_x + xw]);
        let ys = y.slice(s![.., at_y..at_y + yw]);
        out += &(p * &xs.t().dot(k_next).dot(&ys));
    }
    out
}

/// Optimal lifted gain under the rule-set distribution: block `θ` works
/// against the averaged successor cost `Ẽ_θ = Σᵢ pᵢ 𝒦⁺[sᵢ,sᵢ]`.
pub fn stoch_gain(system: &AugmentedSystem, k_next: &Matrix, gamma: usize) -> Result<Matrix> {
    let n = system.plant().state_dim();
    gain_from_blocks(system, gamma, |theta| {
        let mut e = Matrix::zeros((n, n));
        for (i, &p) in system.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let succ = system.succ(i + 1, gamma, theta);
            e += &(p * &k_next.slice(s![(succ - 1) * n..succ * n, (succ - 1) * n..succ * n]));
        }
        Ok(e)
    })
}

/// One backward cost step under the rule-set distribution (see module
/// docs). Symmetrized and guarded to stay positive semidefinite.
pub fn stoch_cost(
    system: &AugmentedSystem,
    k_next: &Matrix,
    gamma: usize,
    gain: &Matrix,
) -> Result<Matrix> {
    let eq_aa = expected_quadratic(system, k_next, system.a_aug(), system.a_aug(), gamma);
    let eq_ab = expected_quadratic(system, k_next, system.a_aug(), system.b_aug(), gamma);
    let eq_bb = expected_quadratic(system, k_next, system.b_aug(), system.b_aug(), gamma);
    let cross = eq_ab.dot(gain);
    let mut k = system.c_aug()
        + &gain.t().dot(system.d_aug()).dot(gain)
        + &eq_aa
        + &cross
        + &cross.t()
        + &gain.t().dot(&eq_bb).dot(gain);
    symmetrize(&mut k);
    let min_eig = min_symmetric_eigenvalue(&k.view());
    if min_eig < -COST_PSD_TOL {
        return Err(Error::NotPositiveDefinite {
            context: "expected cost-to-go",
            min_eig,
        });
    }
    Ok(k)
}

/// Advance the additive noise constants one stage backward:
/// `c[θ] = Σᵢ pᵢ (½ tr(F_θᵀ 𝒦⁺[sᵢ,sᵢ] F_θ) + c⁺[sᵢ])`.
pub fn noise_constants(
    system: &AugmentedSystem,
    k_next: &Matrix,
    c_next: &[f64],
    gamma: usize,
) -> Result<Vec<f64>> {
    let plant = system.plant();
    let n = plant.state_dim();
    let n_modes = system.n_modes();
    if c_next.len() != n_modes {
        return Err(Error::DimensionMismatch {
            context: "noise_constants",
            expected: format!("{n_modes} per-mode constants"),
            found: c_next.len().to_string(),
        });
    }
    let mut out = vec![0.0f64; n_modes];
    for theta in 1..=n_modes {
        let f = plant.f(theta).ok_or_else(|| {
            Error::Config("noise constants require per-mode noise matrices F".into())
        })?;
        let mut acc = 0.0;
        for (i, &p) in system.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let succ = system.succ(i + 1, gamma, theta);
            let block = k_next.slice(s![(succ - 1) * n..succ * n, (succ - 1) * n..succ * n]);
            let trace = f.t().dot(&block).dot(f).diag().sum();
            acc += p * (0.5 * trace + c_next[succ - 1]);
        }
        out[theta - 1] = acc;
    }
    Ok(out)
}

/// Build the suffix tree of expected cost matrices, gains, and noise
/// constants. Requires a stochastic build (noise matrices present).
pub fn precompute_stochastic(
    system: &AugmentedSystem,
    horizon: usize,
    max_sequences: u64,
) -> Result<StochasticTree> {
    if system.f_aug().is_none() {
        return Err(Error::Config(
            "stochastic solver requires a stochastic build (with noise matrices)".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let m_controls = system.m_controls();
    let total = (m_controls as u128)
        .checked_pow(horizon as u32)
        .unwrap_or(u128::MAX);
    if total > max_sequences as u128 {
        return Err(Error::HorizonCapExceeded {
            required: total,
            cap: max_sequences,
        });
    }
    let mut stages: Vec<Vec<StochNode>> = Vec::with_capacity(horizon + 1);
    stages.push(vec![StochNode {
        k: system.q_aug().clone(),
        gain: Matrix::zeros((0, 0)),
        c: vec![0.0; system.n_modes()],
    }]);
    for depth in 1..=horizon {
        let count = (m_controls as u128).pow(depth as u32) as usize;
        let width = count / m_controls;
        let next = {
            let child = &stages[depth - 1];
            (0..count)
                .into_par_iter()
                .map(|rank| {
                    let gamma = rank / width + 1;
                    let node = &child[rank % width];
                    let gain = stoch_gain(system, &node.k, gamma)?;
                    let k = stoch_cost(system, &node.k, gamma, &gain)?;
                    let c = noise_constants(system, &node.k, &node.c, gamma)?;
                    Ok(StochNode { k, gain, c })
                })
                .collect::<Result<Vec<_>>>()?
        };
        stages.push(next);
    }
    stages.reverse();
    Ok(StochasticTree {
        stages,
        horizon,
        m_controls,
    })
}

/// Receding-horizon decision at `stage`: minimize
/// `½ vᵀ 𝒦 v + c[θ]` over the stage's suffixes (ties to the smallest
/// rank), returning the control to apply and the input `u = 𝐆 v`.
pub fn receding_step(
    system: &AugmentedSystem,
    tree: &StochasticTree,
    stage: usize,
    state: &HybridState,
) -> Result<RecedingChoice> {
    if stage >= tree.horizon {
        return Err(Error::Config(format!(
            "receding step at stage {stage} of a {}-step plan",
            tree.horizon
        )));
    }
    let v = system.pack(state)?;
    let mut best_rank = 0usize;
    let mut best_value = f64::INFINITY;
    for rank in 0..tree.suffix_count(stage) {
        let node = &tree.stages[stage][rank];
        let value = 0.5 * v.dot(&node.k.dot(&v)) + node.c[state.theta - 1];
        if value < best_value {
            best_value = value;
            best_rank = rank;
        }
    }
    let node = &tree.stages[stage][best_rank];
    let sequence = tree.sequence(stage, best_rank);
    let u = reduce_gain(&node.gain, system.n_modes()).dot(&v);
    Ok(RecedingChoice {
        rank: best_rank,
        gamma: sequence[0],
        sequence,
        u,
        value: best_value,
    })
}

/// Predicted expected total cost from an initial state: the stage-0
/// receding-horizon value `½ v₀ᵀ 𝒦₀ v₀ + c₀[θ₀]`.
pub fn expected_total_cost(
    system: &AugmentedSystem,
    tree: &StochasticTree,
    state: &HybridState,
) -> Result<f64> {
    Ok(receding_step(system, tree, 0, state)?.value)
}

/// Select the stage-0 plan for `state` from a precomputed tree, returning
/// the chosen suffix policy and its predicted expected cost.
pub fn select_stochastic(
    system: &AugmentedSystem,
    tree: &StochasticTree,
    state: &HybridState,
) -> Result<(StochasticSolution, f64)> {
    let choice = receding_step(system, tree, 0, state)?;
    let best = StochasticSolution {
        sequence: choice.sequence.clone(),
        k: tree.k(0, choice.rank).clone(),
        c: tree.c(0, choice.rank).to_vec(),
        g_per_stage: tree.gains_along(0, choice.rank),
    };
    Ok((best, choice.value))
}

/// Precompute the stochastic tree and select the stage-0 plan for `state`.
pub fn solve_stochastic(
    system: &AugmentedSystem,
    horizon: usize,
    state: &HybridState,
    max_sequences: u64,
) -> Result<StochSolution> {
    let tree = precompute_stochastic(system, horizon, max_sequences)?;
    let (best, value) = select_stochastic(system, &tree, state)?;
    Ok(StochSolution { tree, best, value })
}
