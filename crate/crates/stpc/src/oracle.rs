//! Independent reference solvers used to cross-check the lifted solvers.
//!
//! Nothing here touches the augmented matrices: each oracle works directly
//! on the per-mode plant data with textbook recursions, so agreement with
//! the lifted pipeline is meaningful evidence rather than a tautology.
//!
//! * [`oracle_per_mode_lqr`] — freeze a switching sequence, propagate the
//!   logical state to get the mode path, and run a time-varying discrete
//!   Riccati recursion along it.
//! * [`oracle_brute_force`] — enumerate every switching sequence and take
//!   the cheapest per-mode solution (ties to the lexicographically first).
//! * [`oracle_mjls`] — coupled Riccati recursion for a Markov jump linear
//!   system with mode-transition matrix `P(j′|j)`, including additive-noise
//!   cost constants.

use ndarray::Array1;

use crate::augment::SwitchedPlant;
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, symmetrize};
use crate::stp::{LogicalMatrix, Matrix};

/// Time-varying LQR solution along a fixed mode path.
#[derive(Debug, Clone)]
pub struct PerModeLqrSolution {
    /// Visited joint logical states `θ_0..θ_T` (1-based), length `T+1`.
    pub theta_path: Vec<usize>,
    /// Cost-to-go matrices `P_0..P_T`, length `T+1`; cost is `½ x₀ᵀ P₀ x₀`.
    pub cost_to_go: Vec<Matrix>,
    /// Feedback gains, length `T`; the optimal input is `u_t = −G_t x_t`.
    pub gains: Vec<Matrix>,
}

impl PerModeLqrSolution {
    /// Minimal cost from initial continuous state `x₀`.
    pub fn cost(&self, x0: &Array1<f64>) -> f64 {
        0.5 * x0.dot(&self.cost_to_go[0].dot(x0))
    }
}

/// One backward Riccati step on `(A, B, C, D)` against the next-stage
/// cost-to-go `P⁺`: returns `(P, G)` with `u = −G x` optimal.
fn riccati_step(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    d: &Matrix,
    p_next: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let bt_p = b.t().dot(p_next);
    let s = d + &bt_p.dot(b);
    let bt_p_a = bt_p.dot(a);
    let gain = solve_spd(&s.view(), &bt_p_a.view()).ok_or(Error::NotPositiveDefinite {
        context: "per-mode Riccati input bracket",
        min_eig: f64::NAN,
    })?;
    let mut p = c + &a.t().dot(p_next).dot(a) - &bt_p_a.t().dot(&gain);
    symmetrize(&mut p);
    Ok((p, gain))
}

/// Fixed-sequence reference: propagate `θ` through the structure matrix `L`
/// under the given controls `γ_0..γ_{T−1}`, then solve the time-varying LQR
/// along the visited modes with terminal weight `Q_{θ_T}`.
pub fn oracle_per_mode_lqr(
    plant: &SwitchedPlant,
    logic: &LogicalMatrix,
    theta0: usize,
    gammas: &[usize],
) -> Result<PerModeLqrSolution> {
    let n_modes = plant.n_modes();
    if logic.rows() != n_modes {
        return Err(Error::DimensionMismatch {
            context: "oracle_per_mode_lqr",
            expected: format!("structure matrix with {n_modes} rows"),
            found: logic.rows().to_string(),
        });
    }
    let m_controls = logic.cols() / n_modes;
    if theta0 == 0 || theta0 > n_modes {
        return Err(Error::DimensionMismatch {
            context: "oracle_per_mode_lqr",
            expected: format!("θ₀ in [1, {n_modes}]"),
            found: theta0.to_string(),
        });
    }
    let mut theta_path = vec![theta0];
    for &g in gammas {
        if g == 0 || g > m_controls {
            return Err(Error::DimensionMismatch {
                context: "oracle_per_mode_lqr",
                expected: format!("γ in [1, {m_controls}]"),
                found: g.to_string(),
            });
        }
        let cur = *theta_path.last().expect("non-empty");
        theta_path.push(logic.col((g - 1) * n_modes + cur));
    }
    let horizon = gammas.len();
    let mut cost_to_go = vec![Matrix::zeros((0, 0)); horizon + 1];
    let mut gains = vec![Matrix::zeros((0, 0)); horizon];
    cost_to_go[horizon] = plant.q(theta_path[horizon]).clone();
    for t in (0..horizon).rev() {
        let mode = theta_path[t];
        let (p, g) = riccati_step(
            plant.a(mode),
            plant.b(mode),
            plant.c(mode),
            plant.d(mode),
            &cost_to_go[t + 1],
        )?;
        cost_to_go[t] = p;
        gains[t] = g;
    }
    Ok(PerModeLqrSolution {
        theta_path,
        cost_to_go,
        gains,
    })
}

/// Exhaustive reference for the joint problem: evaluate every one of the
/// `M^T` switching sequences with [`oracle_per_mode_lqr`] and keep the
/// cheapest (ties resolved to the lexicographically first sequence, most
/// significant element first).
pub fn oracle_brute_force(
    plant: &SwitchedPlant,
    logic: &LogicalMatrix,
    theta0: usize,
    x0: &Array1<f64>,
    horizon: usize,
) -> Result<(Vec<usize>, f64)> {
    let m_controls = logic.cols() / logic.rows();
    let count = (m_controls as u128)
        .checked_pow(horizon as u32)
        .filter(|&c| c <= 1 << 24)
        .ok_or(Error::HorizonCapExceeded {
            required: u128::MAX,
            cap: 1 << 24,
        })?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for rank in 0..count {
        // Decode most-significant-first so ascending rank is lexicographic.
        let mut seq = vec![1usize; horizon];
        let mut rem = rank;
        for slot in seq.iter_mut().rev() {
            *slot = (rem % m_controls as u128) as usize + 1;
            rem /= m_controls as u128;
        }
        let sol = oracle_per_mode_lqr(plant, logic, theta0, &seq)?;
        let cost = sol.cost(x0);
        if best.as_ref().map_or(true, |(_, c)| cost < *c) {
            best = Some((seq, cost));
        }
    }
    Ok(best.expect("at least one sequence"))
}

/// Coupled Riccati solution for a Markov jump linear system.
#[derive(Debug, Clone)]
pub struct MjlsSolution {
    /// `k[t][j−1]` is the stage-`t` cost-to-go matrix of mode `j`, `t ≤ T`.
    pub k: Vec<Vec<Matrix>>,
    /// `c[t][j−1]` is the additive noise constant of mode `j` at stage `t`
    /// (all zeros when the plant carries no noise matrices).
    pub c: Vec<Vec<f64>>,
    /// `gains[t][j−1]`: optimal input at stage `t` in mode `j` is `−G x`.
    pub gains: Vec<Vec<Matrix>>,
}

impl MjlsSolution {
    /// Expected cost from `(θ₀ = j, x₀)`: `½ x₀ᵀ K₀ʲ x₀ + c₀ʲ`.
    pub fn cost(&self, mode: usize, x0: &Array1<f64>) -> f64 {
        0.5 * x0.dot(&self.k[0][mode - 1].dot(x0)) + self.c[0][mode - 1]
    }
}

/// Finite-horizon coupled Riccati recursion: with `Eⱼ = Σ_{j′} P(j′|j) K⁺_{j′}`,
///
/// `Kⱼ = Cⱼ + AⱼᵀEⱼAⱼ − AⱼᵀEⱼBⱼ (Dⱼ + BⱼᵀEⱼBⱼ)⁻¹ BⱼᵀEⱼAⱼ`,
///
/// and the noise constants accumulate `½ tr(Fⱼᵀ Eⱼ Fⱼ)` per stage when the
/// plant has noise matrices. `transition` is row-stochastic: row `j` holds
/// `P(· | j)`.
pub fn oracle_mjls(
    plant: &SwitchedPlant,
    transition: &Matrix,
    horizon: usize,
) -> Result<MjlsSolution> {
    let n_modes = plant.n_modes();
    if transition.nrows() != n_modes || transition.ncols() != n_modes {
        return Err(Error::DimensionMismatch {
            context: "oracle_mjls",
            expected: format!("{n_modes}×{n_modes} transition matrix"),
            found: format!("{}×{}", transition.nrows(), transition.ncols()),
        });
    }
    for j in 0..n_modes {
        let row_sum: f64 = transition.row(j).sum();
        if (row_sum - 1.0).abs() > 1e-12 || transition.row(j).iter().any(|&p| p < 0.0) {
            return Err(Error::BadDistribution {
                message: format!("transition row {} is not a distribution", j + 1),
            });
        }
    }
    let n = plant.state_dim();
    let mut k = vec![vec![Matrix::zeros((n, n)); n_modes]; horizon + 1];
    let mut c = vec![vec![0.0f64; n_modes]; horizon + 1];
    let mut gains = vec![Vec::with_capacity(n_modes); horizon];
    for j in 1..=n_modes {
        k[horizon][j - 1] = plant.q(j).clone();
    }
    for t in (0..horizon).rev() {
        for j in 1..=n_modes {
            let mut e = Matrix::zeros((n, n));
            let mut c_next = 0.0;
            for jp in 1..=n_modes {
                let p = transition[[j - 1, jp - 1]];
                if p > 0.0 {
                    e = e + &(p * &k[t + 1][jp - 1]);
                    c_next += p * c[t + 1][jp - 1];
                }
            }
            let (kj, gj) = riccati_step(plant.a(j), plant.b(j), plant.c(j), plant.d(j), &e)?;
            let noise = match plant.f(j) {
                Some(f) => 0.5 * f.t().dot(&e).dot(f).diag().sum(),
                None => 0.0,
            };
            k[t][j - 1] = kj;
            c[t][j - 1] = c_next + noise;
            gains[t].push(gj);
        }
    }
    Ok(MjlsSolution { k, c, gains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stp::matrix_from_rows;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn scalar_plant(with_f: bool) -> SwitchedPlant {
        // One mode, everything 1×1 and equal to 1 except F.
        let one = || matrix_from_rows(&[vec![1.0]]).unwrap();
        SwitchedPlant::new(
            vec![one()],
            vec![one()],
            with_f.then(|| vec![matrix_from_rows(&[vec![0.5]]).unwrap()]),
            vec![one()],
            vec![one()],
            vec![one()],
        )
        .unwrap()
    }

    #[test]
    fn scalar_lqr_one_step_by_hand() {
        // a=b=c=d=q=1, T=1: S = 2, G = 1/2, P₀ = 3/2; from x₀=2 the cost is 3.
        let plant = scalar_plant(false);
        let logic = LogicalMatrix::new(1, vec![1]).unwrap();
        let sol = oracle_per_mode_lqr(&plant, &logic, 1, &[1]).unwrap();
        assert_eq!(sol.theta_path, vec![1, 1]);
        assert_abs_diff_eq!(sol.gains[0][[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.cost_to_go[0][[0, 0]], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.cost(&array![2.0]), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn lqr_closed_loop_cost_matches_value_function() {
        // Two modes flipped by γ = 1 (XOR network), three steps: simulating
        // the optimal feedback must reproduce ½ x₀ᵀP₀x₀ exactly.
        let a = vec![
            matrix_from_rows(&[vec![0.9, 0.2], vec![-0.1, 0.8]]).unwrap(),
            matrix_from_rows(&[vec![0.6, 0.0], vec![0.4, 1.1]]).unwrap(),
        ];
        let b = vec![
            matrix_from_rows(&[vec![1.0], vec![0.5]]).unwrap(),
            matrix_from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
        ];
        let c = vec![
            matrix_from_rows(&[vec![1.0, 0.0], vec![0.0, 1.5]]).unwrap(),
            matrix_from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap(),
        ];
        let d = vec![
            matrix_from_rows(&[vec![0.5]]).unwrap(),
            matrix_from_rows(&[vec![0.8]]).unwrap(),
        ];
        let q = vec![
            matrix_from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            matrix_from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
        ];
        let plant = SwitchedPlant::new(a, b, None, c, d, q).unwrap();
        // L for θ′ = θ XOR γ: γ=1 flips, γ=2 holds.
        let logic = LogicalMatrix::new(2, vec![2, 1, 1, 2]).unwrap();
        let gammas = [1usize, 2, 1];
        let sol = oracle_per_mode_lqr(&plant, &logic, 1, &gammas).unwrap();
        assert_eq!(sol.theta_path, vec![1, 2, 2, 1]);
        let x0 = array![1.5, -2.0];
        let mut x = x0.clone();
        let mut j = 0.0;
        for (t, &mode) in sol.theta_path[..gammas.len()].iter().enumerate() {
            let u = -sol.gains[t].dot(&x);
            j += plant.stage_cost(mode, &x.view(), &u.view());
            x = plant.a(mode).dot(&x) + plant.b(mode).dot(&u);
        }
        j += plant.terminal_cost(sol.theta_path[gammas.len()], &x.view());
        assert_abs_diff_eq!(j, sol.cost(&x0), epsilon = 1e-12);
    }

    #[test]
    fn brute_force_prefers_cheaper_sequence() {
        // Mode 2 is expensive to terminate in (huge Q₂); the XOR network can
        // always steer back to mode 1, so the best sequence must end there.
        let a = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![1.0]]).unwrap(),
        ];
        let b = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![1.0]]).unwrap(),
        ];
        let c = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![1.0]]).unwrap(),
        ];
        let d = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![1.0]]).unwrap(),
        ];
        let q = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![100.0]]).unwrap(),
        ];
        let plant = SwitchedPlant::new(a, b, None, c, d, q).unwrap();
        let logic = LogicalMatrix::new(2, vec![2, 1, 1, 2]).unwrap();
        let (seq, cost) = oracle_brute_force(&plant, &logic, 1, &array![1.0], 2).unwrap();
        // θ₀ = 1; terminal mode is 1 iff the sequence flips an even number
        // of times. All such sequences cost the same here, so the
        // lexicographically first, [1,1] (flip twice), wins.
        assert_eq!(seq, vec![1, 1]);
        let check = oracle_per_mode_lqr(&plant, &logic, 1, &seq).unwrap();
        assert_eq!(*check.theta_path.last().unwrap(), 1);
        assert_abs_diff_eq!(cost, check.cost(&array![1.0]), epsilon = 1e-15);
    }

    #[test]
    fn mjls_with_identity_transition_reduces_to_lqr() {
        let plant = scalar_plant(false);
        let transition = matrix_from_rows(&[vec![1.0]]).unwrap();
        let mjls = oracle_mjls(&plant, &transition, 4).unwrap();
        let logic = LogicalMatrix::new(1, vec![1]).unwrap();
        let lqr = oracle_per_mode_lqr(&plant, &logic, 1, &[1, 1, 1, 1]).unwrap();
        for t in 0..=4 {
            assert_abs_diff_eq!(
                mjls.k[t][0][[0, 0]],
                lqr.cost_to_go[t][[0, 0]],
                epsilon = 1e-14
            );
            assert_eq!(mjls.c[t][0], 0.0);
        }
    }

    #[test]
    fn mjls_with_permutation_transition_follows_the_mode_path() {
        // Deterministic alternation 1→2→1: coupled recursion must equal the
        // per-mode recursion along the alternating path.
        let a = vec![
            matrix_from_rows(&[vec![0.9]]).unwrap(),
            matrix_from_rows(&[vec![1.2]]).unwrap(),
        ];
        let b = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![0.5]]).unwrap(),
        ];
        let c = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![2.0]]).unwrap(),
        ];
        let d = vec![
            matrix_from_rows(&[vec![0.5]]).unwrap(),
            matrix_from_rows(&[vec![0.7]]).unwrap(),
        ];
        let q = vec![
            matrix_from_rows(&[vec![1.0]]).unwrap(),
            matrix_from_rows(&[vec![3.0]]).unwrap(),
        ];
        let plant = SwitchedPlant::new(a, b, None, c, d, q).unwrap();
        let transition = matrix_from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let mjls = oracle_mjls(&plant, &transition, 3).unwrap();
        // Uncontrolled alternating network: one joint control value.
        let logic = LogicalMatrix::new(2, vec![2, 1]).unwrap();
        let lqr = oracle_per_mode_lqr(&plant, &logic, 1, &[1, 1, 1]).unwrap();
        assert_eq!(lqr.theta_path, vec![1, 2, 1, 2]);
        for t in 0..=3 {
            let mode = lqr.theta_path[t];
            assert_abs_diff_eq!(
                mjls.k[t][mode - 1][[0, 0]],
                lqr.cost_to_go[t][[0, 0]],
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn mjls_noise_constant_by_hand() {
        // One mode, T=1: c₁ = 0 and c₀ = ½ tr(Fᵀ Q F) = ½·0.25 = 0.125.
        let plant = scalar_plant(true);
        let transition = matrix_from_rows(&[vec![1.0]]).unwrap();
        let mjls = oracle_mjls(&plant, &transition, 1).unwrap();
        assert_eq!(mjls.c[1][0], 0.0);
        assert_abs_diff_eq!(mjls.c[0][0], 0.125, epsilon = 1e-15);
    }

    #[test]
    fn mjls_rejects_bad_transition_rows() {
        let plant = scalar_plant(false);
        let transition = matrix_from_rows(&[vec![0.9]]).unwrap();
        assert!(matches!(
            oracle_mjls(&plant, &transition, 2),
            Err(Error::BadDistribution { .. })
        ));
    }
}
