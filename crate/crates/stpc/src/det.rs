//! Joint optimal control of a deterministic logical network and switched
//! plant: backward Riccati recursion over every switching suffix.
//!
//! For a fixed horizon `T`, each control suffix `(γ_t, …, γ_{T−1})` induces
//! a quadratic cost-to-go `½ vᵀ K_t v` on the lifted state, built backward
//! from `K_T = 𝐐` through
//!
//! `K_t = 𝐂 + G_tᵀ 𝐃 G_t + (𝐀_γ + 𝐁_γ G_t)ᵀ K_{t+1} (𝐀_γ + 𝐁_γ G_t)`,
//!
//! where `G_t` is the optimal lifted feedback for that choice of `γ_t`. The
//! lifted input is constrained to the form `θ⃗ ⊗ u` — it lives in the block
//! selected by the current mode — so the minimization splits per mode block:
//! with `s = succ(γ, θ)` and `K⁺_{ss}` the corresponding diagonal block,
//!
//! `G[θ,θ] = −(D_θ + B_θᵀ K⁺_{ss} B_θ)⁻¹ B_θᵀ K⁺_{ss} A_θ`,
//!
//! zero elsewhere. Off-diagonal blocks of `K_t` are never read by gains,
//! values, or selection (a lifted state occupies exactly one block), and
//! the diagonal blocks satisfy the per-mode dynamic program exactly.
//!
//! The tree of all suffixes has `M^{T−t}` nodes at stage `t`; suffix ranks
//! encode the sequence most-significant-first, so ascending rank is
//! lexicographic order and ties resolve to the smallest rank.

use ndarray::s;
use rayon::prelude::*;

use crate::augment::{AugmentedSystem, HybridState};
use crate::error::{Error, Result};
use crate::linalg::{min_symmetric_eigenvalue, solve_spd, symmetrize};
use crate::stp::Matrix;

/// Positive-definiteness guard on the per-mode input bracket
/// `D_θ + B_θᵀ K⁺ B_θ`: minimum eigenvalue below this aborts the recursion.
pub const GAIN_BRACKET_TOL: f64 = 1e-10;

/// Numerical floor for the cost-to-go matrices: each `K_t` must stay
/// symmetric positive semidefinite up to this tolerance.
pub const COST_PSD_TOL: f64 = 1e-10;

/// Default ceiling on the number of switching sequences `M^T`.
pub const DEFAULT_MAX_SEQUENCES: u64 = 4096;

#[derive(Debug, Clone)]
struct SuffixNode {
    k: Matrix,
    gain: Matrix,
}

/// Backward-recursion results for every switching suffix: stage `t` holds
/// one node per suffix `(γ_t..γ_{T−1})`, rank-indexed lexicographically.
#[derive(Debug, Clone)]
pub struct SolutionTree {
    stages: Vec<Vec<SuffixNode>>,
    horizon: usize,
    m_controls: usize,
}

/// Optimal plan for one initial state: the minimizing switching sequence,
/// its stage-0 cost-to-go, and the lifted feedback gains along the way.
#[derive(Debug, Clone)]
pub struct SequenceSolution {
    /// Switching sequence `γ_0..γ_{T−1}` (1-based values).
    pub sequence: Vec<usize>,
    /// Stage-0 cost-to-go matrix of the selected sequence.
    pub k: Matrix,
    /// Lifted gains `G_0..G_{T−1}`, each `Nm × Nn`; the lifted input is
    /// `θ⃗_t ⊗ u_t = G_t v_t`.
    pub g_per_stage: Vec<Matrix>,
}

/// Everything `solve` produces: the full suffix tree plus the selection
/// for the given initial state.
#[derive(Debug, Clone)]
pub struct DetSolution {
    pub tree: SolutionTree,
    pub best: SequenceSolution,
    /// Predicted optimal cost `½ v₀ᵀ K₀ v₀`.
    pub value: f64,
}

impl SolutionTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn m_controls(&self) -> usize {
        self.m_controls
    }

    /// Number of suffixes at stage `t`: `M^{T−t}`.
    pub fn suffix_count(&self, stage: usize) -> usize {
        self.stages[stage].len()
    }

    /// Cost-to-go matrix of suffix `rank` at stage `t`.
    pub fn k(&self, stage: usize, rank: usize) -> &Matrix {
        &self.stages[stage][rank].k
    }

    /// First-step gain of suffix `rank` at stage `t` (empty at stage `T`).
    pub fn gain(&self, stage: usize, rank: usize) -> &Matrix {
        &self.stages[stage][rank].gain
    }

    /// Mutable cost-to-go access — exists so diagnostics can inject
    /// perturbations and watch the consistency checks fail.
    pub fn k_mut(&mut self, stage: usize, rank: usize) -> &mut Matrix {
        &mut self.stages[stage][rank].k
    }

    /// Decode the suffix of `rank` at stage `t` (most significant first).
    pub fn sequence(&self, stage: usize, rank: usize) -> Vec<usize> {
        sequence_from_rank(rank, self.horizon - stage, self.m_controls)
    }

    /// Gains `G_t..G_{T−1}` along the suffix of `rank` at stage `t`:
    /// dropping `j` leading elements leaves the suffix of rank
    /// `rank mod M^{T−t−j}` at stage `t+j`.
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

fn sequence_from_rank(rank: usize, len: usize, m_controls: usize) -> Vec<usize> {
    let mut seq = vec![1usize; len];
    let mut rem = rank;
    for slot in seq.iter_mut().rev() {
        *slot = rem % m_controls + 1;
        rem /= m_controls;
    }
    seq
}

/// Optimal lifted gain for control choice `γ` against next-stage cost-to-go
/// `k_next`: block-diagonal, `u`-convention `θ⃗ ⊗ u = G v` (minus sign
/// included). Fails with [`Error::NotPositiveDefinite`] when some per-mode
/// input bracket falls below [`GAIN_BRACKET_TOL`].
pub fn riccati_gain(system: &AugmentedSystem, k_next: &Matrix, gamma: usize) -> Result<Matrix> {
    gain_from_blocks(system, gamma, |theta| {
        let s = system.succ(1, gamma, theta);
        let n = system.plant().state_dim();
        Ok(k_next
            .slice(s![(s - 1) * n..s * n, (s - 1) * n..s * n])
            .to_owned())
    })
}

/// Shared blockwise gain assembly: `effective(θ)` supplies the `n×n`
/// cost-to-go block the mode-θ input works against.
pub(crate) fn gain_from_blocks(
    system: &AugmentedSystem,
    gamma: usize,
    effective: impl Fn(usize) -> Result<Matrix>,
) -> Result<Matrix> {
    let plant = system.plant();
    let (n, m) = (plant.state_dim(), plant.input_dim());
    let n_modes = system.n_modes();
    if gamma == 0 || gamma > system.m_controls() {
        return Err(Error::DimensionMismatch {
            context: "riccati gain",
            expected: format!("γ in [1, {}]", system.m_controls()),
            found: gamma.to_string(),
        });
    }
    let mut gain = Matrix::zeros((n_modes * m, n_modes * n));
    for theta in 1..=n_modes {
        let e = effective(theta)?;
        let b = plant.b(theta);
        let bt_e = b.t().dot(&e);
        let mut bracket = plant.d(theta) + &bt_e.dot(b);
        symmetrize(&mut bracket);
        let min_eig = min_symmetric_eigenvalue(&bracket.view());
        if min_eig < GAIN_BRACKET_TOL {
            return Err(Error::NotPositiveDefinite {
                context: "gain input bracket",
                min_eig,
            });
        }
        let rhs = bt_e.dot(plant.a(theta));
        let block = solve_spd(&bracket.view(), &rhs.view()).ok_or(Error::NotPositiveDefinite {
            context: "gain input bracket",
            min_eig,
        })?;
        gain.slice_mut(s![(theta - 1) * m..theta * m, (theta - 1) * n..theta * n])
            .assign(&(-block));
    }
    Ok(gain)
}

/// One backward cost step for control choice `γ` and its gain:
/// `K = 𝐂 + Gᵀ𝐃G + (𝐀_γ + 𝐁_γG)ᵀ K⁺ (𝐀_γ + 𝐁_γG)`, symmetrized, with a
/// positive-semidefiniteness guard at [`COST_PSD_TOL`].
pub fn riccati_cost(
    system: &AugmentedSystem,
    k_next: &Matrix,
    gamma: usize,
    gain: &Matrix,
) -> Result<Matrix> {
    let closed = &system.slice_a(1, gamma).to_owned() + &system.slice_b(1, gamma).dot(gain);
    let mut k = system.c_aug()
        + &gain.t().dot(system.d_aug()).dot(gain)
        + &closed.t().dot(k_next).dot(&closed);
    symmetrize(&mut k);
    let min_eig = min_symmetric_eigenvalue(&k.view());
    if min_eig < -COST_PSD_TOL {
        return Err(Error::NotPositiveDefinite {
            context: "cost-to-go",
            min_eig,
        });
    }
    Ok(k)
}

/// Build the full suffix tree for `horizon` steps. Errors with
/// [`Error::HorizonCapExceeded`] when `M^T > max_sequences`.
pub fn precompute_tree(
    system: &AugmentedSystem,
    horizon: usize,
    max_sequences: u64,
) -> Result<SolutionTree> {
    if system.ell() != 1 {
        return Err(Error::Config(
            "deterministic solver requires a deterministic build (single rule set)".into(),
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
    let mut stages: Vec<Vec<SuffixNode>> = Vec::with_capacity(horizon + 1);
    stages.push(vec![SuffixNode {
        k: system.q_aug().clone(),
        gain: Matrix::zeros((0, 0)),
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
                    let k_next = &child[rank % width].k;
                    let gain = riccati_gain(system, k_next, gamma)?;
                    let k = riccati_cost(system, k_next, gamma, &gain)?;
                    Ok(SuffixNode { k, gain })
                })
                .collect::<Result<Vec<_>>>()?
        };
        stages.push(next);
    }
    stages.reverse();
    Ok(SolutionTree {
        stages,
        horizon,
        m_controls,
    })
}

/// Pick the cheapest sequence for an initial state: minimize
/// `½ v₀ᵀ K₀ v₀` over all stage-0 suffixes, ties to the lexicographically
/// first sequence.
pub fn select_sequence(
    system: &AugmentedSystem,
    tree: &SolutionTree,
    state: &HybridState,
) -> Result<(SequenceSolution, f64)> {
    let v0 = system.pack(state)?;
    let mut best_rank = 0usize;
    let mut best_value = f64::INFINITY;
    for rank in 0..tree.suffix_count(0) {
        let value = 0.5 * v0.dot(&tree.k(0, rank).dot(&v0));
        if value < best_value {
            best_value = value;
            best_rank = rank;
        }
    }
    Ok((
        SequenceSolution {
            sequence: tree.sequence(0, best_rank),
            k: tree.k(0, best_rank).clone(),
            g_per_stage: tree.gains_along(0, best_rank),
        },
        best_value,
    ))
}

/// Precompute the suffix tree and select the optimal sequence for `state`.
pub fn solve(
    system: &AugmentedSystem,
    horizon: usize,
    state: &HybridState,
    max_sequences: u64,
) -> Result<DetSolution> {
    let tree = precompute_tree(system, horizon, max_sequences)?;
    let (best, value) = select_sequence(system, &tree, state)?;
    Ok(DetSolution { tree, best, value })
}

/// Collapse a lifted gain to the physical input map: `𝐆 = (1_Nᵀ ⊗ I_m) G`
/// sums the row blocks, so `u = 𝐆 v` for any lifted state `v = θ⃗ ⊗ x`
/// (exactly one row block of `G v` is active).
pub fn reduce_gain(gain: &Matrix, n_modes: usize) -> Matrix {
    let m = gain.nrows() / n_modes;
    let mut out = Matrix::zeros((m, gain.ncols()));
    for block in 0..n_modes {
        out += &gain.slice(s![block * m..(block + 1) * m, ..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::SwitchedPlant;
    use crate::logic::{network_structure_matrix, parse_rule, LogicalNetwork, UpdateRule};
    use crate::oracle::{oracle_brute_force, oracle_per_mode_lqr};
    use crate::stp::matrix_from_rows;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// XOR network (γ=1 flips the mode) over a two-mode planar plant.
    fn xor_setup() -> AugmentedSystem {
        let net = LogicalNetwork::deterministic(
            vec![2],
            vec![2],
            vec![UpdateRule::Table(vec![1; 4])],
        )
        .unwrap();
        let rule = parse_rule("t1 ^ g1", &net).unwrap();
        let net = LogicalNetwork::deterministic(vec![2], vec![2], vec![rule]).unwrap();
        let logic = network_structure_matrix(&net).unwrap();
        let plant = SwitchedPlant::new(
            vec![
                matrix_from_rows(&[vec![0.9, 0.2], vec![-0.1, 0.8]]).unwrap(),
                matrix_from_rows(&[vec![0.6, 0.0], vec![0.4, 1.1]]).unwrap(),
            ],
            vec![
                matrix_from_rows(&[vec![1.0], vec![0.5]]).unwrap(),
                matrix_from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            ],
            None,
            vec![
                matrix_from_rows(&[vec![1.0, 0.0], vec![0.0, 1.5]]).unwrap(),
                matrix_from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap(),
            ],
            vec![
                matrix_from_rows(&[vec![0.5]]).unwrap(),
                matrix_from_rows(&[vec![0.8]]).unwrap(),
            ],
            vec![
                matrix_from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap(),
                matrix_from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
            ],
        )
        .unwrap();
        AugmentedSystem::build_deterministic(&logic, &plant, 2).unwrap()
    }

    #[test]
    fn gain_is_block_diagonal_with_per_mode_blocks() {
        let sys = xor_setup();
        let k_next = sys.q_aug().clone();
        for gamma in 1..=2usize {
            let gain = riccati_gain(&sys, &k_next, gamma).unwrap();
            assert_eq!(gain.shape(), &[2, 4]);
            // Off-diagonal blocks vanish.
            assert_eq!(gain[[0, 2]], 0.0);
            assert_eq!(gain[[0, 3]], 0.0);
            assert_eq!(gain[[1, 0]], 0.0);
            assert_eq!(gain[[1, 1]], 0.0);
            // Each diagonal block is the per-mode LQR gain (sign flipped).
            let plant = sys.plant();
            for theta in 1..=2usize {
                let s = sys.succ(1, gamma, theta);
                let q = plant.q(s);
                let b = plant.b(theta);
                let bracket = plant.d(theta) + &b.t().dot(q).dot(b);
                let rhs = b.t().dot(q).dot(plant.a(theta));
                let expect = -solve_spd(&bracket.view(), &rhs.view()).unwrap();
                let got = gain.slice(s![theta - 1..theta, (theta - 1) * 2..theta * 2]);
                assert_abs_diff_eq!(got.to_owned(), expect, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn single_step_matches_per_mode_oracle() {
        // T = 1: the lifted diagonal blocks must equal the oracle P₀ for
        // each (θ, γ), and the gain blocks its feedback (sign convention).
        let sys = xor_setup();
        let plant = sys.plant();
        for gamma in 1..=2usize {
            let gain = riccati_gain(&sys, sys.q_aug(), gamma).unwrap();
            let k = riccati_cost(&sys, sys.q_aug(), gamma, &gain).unwrap();
            for theta in 1..=2usize {
                let oracle =
                    oracle_per_mode_lqr(plant, &sys.logic()[0], theta, &[gamma]).unwrap();
                let block = k
                    .slice(s![(theta - 1) * 2..theta * 2, (theta - 1) * 2..theta * 2])
                    .to_owned();
                assert_abs_diff_eq!(block, oracle.cost_to_go[0], epsilon = 1e-12);
                let g_block = gain
                    .slice(s![theta - 1..theta, (theta - 1) * 2..theta * 2])
                    .to_owned();
                assert_abs_diff_eq!(g_block, -&oracle.gains[0], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tree_selection_matches_brute_force() {
        let sys = xor_setup();
        let tree = precompute_tree(&sys, 3, DEFAULT_MAX_SEQUENCES).unwrap();
        assert_eq!(tree.suffix_count(0), 8);
        assert_eq!(tree.suffix_count(3), 1);
        let states = [
            HybridState { theta: 1, x: array![1.5, -2.0] },
            HybridState { theta: 2, x: array![-0.3, 0.9] },
            HybridState { theta: 1, x: array![4.0, 4.0] },
        ];
        for state in &states {
            let (best, value) = select_sequence(&sys, &tree, state).unwrap();
            let (oracle_seq, oracle_cost) =
                oracle_brute_force(sys.plant(), &sys.logic()[0], state.theta, &state.x, 3)
                    .unwrap();
            assert_eq!(best.sequence, oracle_seq);
            assert_abs_diff_eq!(value, oracle_cost, epsilon = 1e-12 * (1.0 + oracle_cost));
        }
    }

    #[test]
    fn gains_along_matches_suffix_structure() {
        let sys = xor_setup();
        let tree = precompute_tree(&sys, 3, DEFAULT_MAX_SEQUENCES).unwrap();
        // Rank 5 at stage 0 with M = 2 is the sequence [2, 1, 2].
        assert_eq!(tree.sequence(0, 5), vec![2, 1, 2]);
        let gains = tree.gains_along(0, 5);
        assert_eq!(gains.len(), 3);
        // Dropping one element leaves [1, 2] = rank 1 at stage 1, then
        // [2] = rank 1 at stage 2.
        assert_abs_diff_eq!(gains[1], tree.gain(1, 1).clone(), epsilon = 0.0);
        assert_abs_diff_eq!(gains[2], tree.gain(2, 1).clone(), epsilon = 0.0);
    }

    #[test]
    fn ties_resolve_to_lexicographically_first() {
        // Identical modes and a γ-insensitive network: every sequence costs
        // the same, so selection must return [1, 1].
        let mode_a = matrix_from_rows(&[vec![0.9]]).unwrap();
        let plant = SwitchedPlant::new(
            vec![mode_a.clone(), mode_a.clone()],
            vec![
                matrix_from_rows(&[vec![1.0]]).unwrap(),
                matrix_from_rows(&[vec![1.0]]).unwrap(),
            ],
            None,
            vec![
                matrix_from_rows(&[vec![1.0]]).unwrap(),
                matrix_from_rows(&[vec![1.0]]).unwrap(),
            ],
            vec![
                matrix_from_rows(&[vec![0.5]]).unwrap(),
                matrix_from_rows(&[vec![0.5]]).unwrap(),
            ],
            vec![
                matrix_from_rows(&[vec![2.0]]).unwrap(),
                matrix_from_rows(&[vec![2.0]]).unwrap(),
            ],
        )
        .unwrap();
        let net = LogicalNetwork::deterministic(
            vec![2],
            vec![2],
            vec![UpdateRule::Table(vec![1; 4])],
        )
        .unwrap();
        let rule = parse_rule("t1", &net).unwrap();
        let net = LogicalNetwork::deterministic(vec![2], vec![2], vec![rule]).unwrap();
        let logic = network_structure_matrix(&net).unwrap();
        let sys = AugmentedSystem::build_deterministic(&logic, &plant, 2).unwrap();
        let sol = solve(
            &sys,
            2,
            &HybridState { theta: 1, x: array![1.0] },
            DEFAULT_MAX_SEQUENCES,
        )
        .unwrap();
        assert_eq!(sol.best.sequence, vec![1, 1]);
    }

    #[test]
    fn horizon_cap_is_enforced() {
        let sys = xor_setup();
        match precompute_tree(&sys, 5, 16) {
            Err(Error::HorizonCapExceeded { required, cap }) => {
                assert_eq!(required, 32);
                assert_eq!(cap, 16);
            }
            other => panic!("expected HorizonCapExceeded, got {other:?}"),
        }
    }

    #[test]
    fn reduced_gain_sums_row_blocks() {
        let sys = xor_setup();
        let gain = riccati_gain(&sys, sys.q_aug(), 1).unwrap();
        let reduced = reduce_gain(&gain, 2);
        assert_eq!(reduced.shape(), &[1, 4]);
        // For a lifted state in block θ, u = 𝐆 v equals the θ-block of G v.
        for theta in 1..=2usize {
            let state = HybridState { theta, x: array![0.7, -1.3] };
            let v = sys.pack(&state).unwrap();
            let full = gain.dot(&v);
            let reduced_u = reduced.dot(&v);
            assert_abs_diff_eq!(reduced_u[0], full[theta - 1], epsilon = 1e-14);
        }
    }
}
