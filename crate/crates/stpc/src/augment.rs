//! Switched linear plants and their lifted, mode-augmented representation.
//!
//! A switched plant has one linear system `(Aᵢ, Bᵢ[, Fᵢ])` and cost triple
//! `(Cᵢ, Dᵢ, Qᵢ)` per joint logical state `i ∈ [1, N]`. With the embedding
//! `v_t = θ⃗_t ⊗ x_t ∈ ℝ^{Nn}` (state vector sitting in the block picked by
//! the active mode), the coupled dynamics collapse into one bilinear update
//!
//! `v_{t+1} = 𝐀 ⋉ γ⃗_t ⋉ v_t + 𝐁 ⋉ γ⃗_t ⋉ (θ⃗_t ⊗ u_t)`
//!
//! where the lifted matrices are STP products of the network structure
//! matrix `L`, the horizontally stacked per-mode matrices, and the
//! power-reducing matrix `Φ_N` that contracts the duplicated mode factor:
//!
//! * `𝐀 = L ⋉ (I_{MN} ⊗ [A₁ ⋯ A_N]) ⋉ (I_M ⊗ Φ_N) ∈ ℝ^{Nn×MNn}`
//! * `𝐁 = L ⋉ (I_{MN} ⊗ [B₁ ⋯ B_N]) ⋉ (I_M ⊗ Φ_N) ∈ ℝ^{Nn×MNm}`
//!
//! For randomly switched networks with rule-set matrices `L₁..L_ℓ`, the same
//! construction applied to `L̃ = [L₁ ⋯ L_ℓ] ∈ L_{N×ℓMN}` yields `Ã, B̃, F̃`
//! with an extra leading σ-block dimension. Costs stack block-diagonally:
//! `𝐂 = diag(C₁..C_N)`, `𝐃 = diag(D₁..D_N)`, `𝐐 = diag(Q₁..Q_N)`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, min_symmetric_eigenvalue};
use crate::logic::CompiledLogic;
use crate::stp::{eye, kron, power_reducing, stp, LogicalMatrix, Matrix};

/// Definiteness tolerance for cost-matrix validation: positive definite
/// means minimum eigenvalue ≥ `DEFINITENESS_TOL`, positive semidefinite
/// means ≥ `-DEFINITENESS_TOL`.
pub const DEFINITENESS_TOL: f64 = 1e-10;

/// Block-identification tolerance for [`AugmentedSystem::unpack`].
pub const UNPACK_TOL: f64 = 1e-12;

/// Per-mode plant and cost data for `N` modes.
#[derive(Debug, Clone)]
pub struct SwitchedPlant {
    a: Vec<Matrix>,
    b: Vec<Matrix>,
    f: Option<Vec<Matrix>>,
    c: Vec<Matrix>,
    d: Vec<Matrix>,
    q: Vec<Matrix>,
    n: usize,
    m: usize,
    r: usize,
}

fn check_shape(
    which: &'static str,
    mode: usize,
    mat: &Matrix,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(Error::DimensionMismatch {
            context: which,
            expected: format!("{rows}×{cols} in mode {mode}"),
            found: format!("{}×{}", mat.nrows(), mat.ncols()),
        });
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!(
            "{which} of mode {mode} contains a non-finite entry"
        )));
    }
    Ok(())
}

fn check_symmetric(which: &'static str, mode: usize, mat: &Matrix) -> Result<()> {
    let scale = mat.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    if asymmetry(&mat.view()) > DEFINITENESS_TOL * scale {
        return Err(Error::Config(format!(
            "{which} of mode {mode} is not symmetric"
        )));
    }
    Ok(())
}

impl SwitchedPlant {
    /// Validate and assemble a plant. Every list must hold one matrix per
    /// mode; `c` must be symmetric positive semidefinite, `d` and `q`
    /// symmetric positive definite (minimum eigenvalue at least
    /// [`DEFINITENESS_TOL`]). Noise inputs `f` are optional — required only
    /// for stochastic lifted builds.
    pub fn new(
        a: Vec<Matrix>,
        b: Vec<Matrix>,
        f: Option<Vec<Matrix>>,
        c: Vec<Matrix>,
        d: Vec<Matrix>,
        q: Vec<Matrix>,
    ) -> Result<Self> {
        let n_modes = a.len();
        if n_modes == 0 {
            return Err(Error::Config("plant needs at least one mode".into()));
        }
        for (name, list) in [("B", &b), ("C", &c), ("D", &d), ("Q", &q)] {
            if list.len() != n_modes {
                return Err(Error::Config(format!(
                    "{name} has {} matrices but A has {n_modes}",
                    list.len()
                )));
            }
        }
        if let Some(fs) = &f {
            if fs.len() != n_modes {
                return Err(Error::Config(format!(
                    "F has {} matrices but A has {n_modes}",
                    fs.len()
                )));
            }
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        let r = f.as_ref().map(|fs| fs[0].ncols()).unwrap_or(0);
        for i in 0..n_modes {
            let mode = i + 1;
            check_shape("A", mode, &a[i], n, n)?;
            check_shape("B", mode, &b[i], n, m)?;
            if let Some(fs) = &f {
                check_shape("F", mode, &fs[i], n, r)?;
            }
            check_shape("C", mode, &c[i], n, n)?;
            check_shape("D", mode, &d[i], m, m)?;
            check_shape("Q", mode, &q[i], n, n)?;
            check_symmetric("C", mode, &c[i])?;
            check_symmetric("D", mode, &d[i])?;
            check_symmetric("Q", mode, &q[i])?;
            let c_min = min_symmetric_eigenvalue(&c[i].view());
            if c_min < -DEFINITENESS_TOL {
                return Err(Error::NotPositiveDefinite {
                    context: "state cost C",
                    min_eig: c_min,
                });
            }
            for (name, mat) in [("input cost D", &d[i]), ("terminal cost Q", &q[i])] {
                let min_eig = min_symmetric_eigenvalue(&mat.view());
                if min_eig < DEFINITENESS_TOL {
                    return Err(Error::NotPositiveDefinite {
                        context: name,
                        min_eig,
                    });
                }
            }
        }
        Ok(Self {
            a,
            b,
            f,
            c,
            d,
            q,
            n,
            m,
            r,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.a.len()
    }

    /// Continuous state dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Continuous input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// Noise dimension `r` (0 when no `F` matrices are present).
    pub fn noise_dim(&self) -> usize {
        self.r
    }

    pub fn a(&self, mode: usize) -> &Matrix {
        &self.a[mode - 1]
    }

    pub fn b(&self, mode: usize) -> &Matrix {
        &self.b[mode - 1]
    }

    pub fn f(&self, mode: usize) -> Option<&Matrix> {
        self.f.as_ref().map(|fs| &fs[mode - 1])
    }

    pub fn c(&self, mode: usize) -> &Matrix {
        &self.c[mode - 1]
    }

    pub fn d(&self, mode: usize) -> &Matrix {
        &self.d[mode - 1]
    }

    pub fn q(&self, mode: usize) -> &Matrix {
        &self.q[mode - 1]
    }

    pub fn has_noise(&self) -> bool {
        self.f.is_some()
    }

    /// Running cost `½(xᵀ C_ι x + uᵀ D_ι u)` of mode `ι` (1-based).
    pub fn stage_cost(&self, mode: usize, x: &ArrayView1<f64>, u: &ArrayView1<f64>) -> f64 {
        let cx = self.c[mode - 1].dot(x);
        let du = self.d[mode - 1].dot(u);
        0.5 * (x.dot(&cx) + u.dot(&du))
    }

    /// Terminal cost `½ xᵀ Q_ι x` of mode `ι` (1-based).
    pub fn terminal_cost(&self, mode: usize, x: &ArrayView1<f64>) -> f64 {
        0.5 * x.dot(&self.q[mode - 1].dot(x))
    }
}

/// Mixed logical/continuous state: joint mode index `θ ∈ [1, N]` plus the
/// continuous state `x ∈ ℝⁿ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub theta: usize,
    pub x: Array1<f64>,
}

/// Lifted representation shared by the deterministic (`ℓ = 1`) and
/// stochastic (`ℓ > 1`) cases. Column blocks of the lifted matrices are
/// indexed `(σ, γ)` outermost-first; [`AugmentedSystem::slice_a`] and
/// friends extract them.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    plant: SwitchedPlant,
    logic: Vec<LogicalMatrix>,
    probs: Vec<f64>,
    m_controls: usize,
    a_aug: Matrix,
    b_aug: Matrix,
    f_aug: Option<Matrix>,
    c_aug: Matrix,
    d_aug: Matrix,
    q_aug: Matrix,
}

fn hstack(mats: &[Matrix]) -> Matrix {
    let rows = mats[0].nrows();
    let cols: usize = mats.iter().map(|m| m.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for m in mats {
        out.slice_mut(s![.., at..at + m.ncols()]).assign(m);
        at += m.ncols();
    }
    out
}

fn block_diag(mats: &[Matrix]) -> Matrix {
    let rows: usize = mats.iter().map(|m| m.nrows()).sum();
    let cols: usize = mats.iter().map(|m| m.ncols()).sum();
    let mut out = Array2::zeros((rows, cols));
    let (mut r0, mut c0) = (0, 0);
    for m in mats {
        out.slice_mut(s![r0..r0 + m.nrows(), c0..c0 + m.ncols()])
            .assign(m);
        r0 += m.nrows();
        c0 += m.ncols();
    }
    out
}

/// `X ⋉ (I_blocks ⊗ [P₁ ⋯ P_N]) ⋉ (I_outer ⊗ Φ_N)` — the common shape of
/// every lifted build. `x` is the (possibly concatenated) structure matrix
/// as a dense `N × blocks·N` array.
fn lift(x: &Matrix, per_mode: &[Matrix], blocks: usize, outer: usize) -> Matrix {
    let stacked = hstack(per_mode);
    let mid = kron(&eye(blocks), &stacked);
    let phi = power_reducing(per_mode.len()).to_dense();
    let tail = kron(&eye(outer), &phi);
    stp(&stp(x, &mid), &tail)
}

impl AugmentedSystem {
    /// Lift a deterministic network (`ℓ = 1`) over a plant. Per-mode noise
    /// matrices, if present, are ignored — deterministic dynamics carry no
    /// noise term.
    pub fn build_deterministic(
        logic: &CompiledLogic,
        plant: &SwitchedPlant,
        m_controls: usize,
    ) -> Result<Self> {
        if logic.ell() != 1 {
            return Err(Error::Config(format!(
                "deterministic build requires a single rule set, found {}",
                logic.ell()
            )));
        }
        Self::build(logic, plant, m_controls, false)
    }

    /// Lift a randomly switched network (`ℓ ≥ 1` rule sets with
    /// probabilities) over a plant. Requires per-mode noise matrices `Fᵢ`.
    pub fn build_stochastic(
        logic: &CompiledLogic,
        plant: &SwitchedPlant,
        m_controls: usize,
    ) -> Result<Self> {
        if !plant.has_noise() {
            return Err(Error::Config(
                "stochastic build requires per-mode noise matrices F".into(),
            ));
        }
        Self::build(logic, plant, m_controls, true)
    }

    fn build(
        logic: &CompiledLogic,
        plant: &SwitchedPlant,
        m_controls: usize,
        with_noise: bool,
    ) -> Result<Self> {
        let n_modes = plant.n_modes();
        let ell = logic.ell();
        for (i, l) in logic.matrices.iter().enumerate() {
            if l.rows() != n_modes || l.cols() != m_controls * n_modes {
                return Err(Error::DimensionMismatch {
                    context: "structure matrix",
                    expected: format!("{n_modes}×{}", m_controls * n_modes),
                    found: format!("{}×{} (rule set {})", l.rows(), l.cols(), i + 1),
                });
            }
        }
        // L̃ = [L₁ ⋯ L_ℓ] as a dense N × ℓMN matrix (ℓ = 1 leaves L alone).
        let concat = LogicalMatrix::hconcat(&logic.matrices)?.to_dense();
        let blocks = ell * m_controls * n_modes;
        let outer = ell * m_controls;
        let a_list: Vec<Matrix> = (1..=n_modes).map(|i| plant.a(i).clone()).collect();
        let b_list: Vec<Matrix> = (1..=n_modes).map(|i| plant.b(i).clone()).collect();
        let a_aug = lift(&concat, &a_list, blocks, outer);
        let b_aug = lift(&concat, &b_list, blocks, outer);
        let f_aug = if with_noise {
            let f_list: Vec<Matrix> = (1..=n_modes)
                .map(|i| plant.f(i).expect("checked: noise present").clone())
                .collect();
            Some(lift(&concat, &f_list, blocks, outer))
        } else {
            None
        };
        let c_aug = block_diag(&(1..=n_modes).map(|i| plant.c(i).clone()).collect::<Vec<_>>());
        let d_aug = block_diag(&(1..=n_modes).map(|i| plant.d(i).clone()).collect::<Vec<_>>());
        let q_aug = block_diag(&(1..=n_modes).map(|i| plant.q(i).clone()).collect::<Vec<_>>());
        Ok(Self {
            plant: plant.clone(),
            logic: logic.matrices.clone(),
            probs: logic.probs.clone(),
            m_controls,
            a_aug,
            b_aug,
            f_aug,
            c_aug,
            d_aug,
            q_aug,
        })
    }

    pub fn plant(&self) -> &SwitchedPlant {
        &self.plant
    }

    /// Structure matrices, one per rule set.
    pub fn logic(&self) -> &[LogicalMatrix] {
        &self.logic
    }

    /// Rule-set probabilities (singleton `[1.0]` for deterministic builds).
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn ell(&self) -> usize {
        self.logic.len()
    }

    pub fn n_modes(&self) -> usize {
        self.plant.n_modes()
    }

    pub fn m_controls(&self) -> usize {
        self.m_controls
    }

    /// Lifted state dimension `N·n`.
    pub fn dim_v(&self) -> usize {
        self.n_modes() * self.plant.state_dim()
    }

    /// Lifted input dimension `N·m`.
    pub fn dim_w(&self) -> usize {
        self.n_modes() * self.plant.input_dim()
    }

    pub fn a_aug(&self) -> &Matrix {
        &self.a_aug
    }

    pub fn b_aug(&self) -> &Matrix {
        &self.b_aug
    }

    pub fn f_aug(&self) -> Option<&Matrix> {
        self.f_aug.as_ref()
    }

    /// Block-diagonal running state cost `diag(C₁..C_N)`.
    pub fn c_aug(&self) -> &Matrix {
        &self.c_aug
    }

    /// Block-diagonal running input cost `diag(D₁..D_N)`.
    pub fn d_aug(&self) -> &Matrix {
        &self.d_aug
    }

    /// Block-diagonal terminal cost `diag(Q₁..Q_N)`.
    pub fn q_aug(&self) -> &Matrix {
        &self.q_aug
    }

    fn slice<'a>(
        &self,
        mat: &'a Matrix,
        width: usize,
        sigma: usize,
        gamma: usize,
    ) -> ArrayView2<'a, f64> {
        debug_assert!(sigma >= 1 && sigma <= self.ell());
        debug_assert!(gamma >= 1 && gamma <= self.m_controls);
        let at = ((sigma - 1) * self.m_controls + (gamma - 1)) * width;
        mat.slice(s![.., at..at + width])
    }

    /// `Nn × Nn` column block of `𝐀` for rule set `σ` and control `γ`
    /// (both 1-based; deterministic systems use `σ = 1`).
    pub fn slice_a(&self, sigma: usize, gamma: usize) -> ArrayView2<'_, f64> {
        self.slice(&self.a_aug, self.dim_v(), sigma, gamma)
    }

    /// `Nn × Nm` column block of `𝐁` for rule set `σ` and control `γ`.
    pub fn slice_b(&self, sigma: usize, gamma: usize) -> ArrayView2<'_, f64> {
        self.slice(&self.b_aug, self.dim_w(), sigma, gamma)
    }

    /// `Nn × Nr` column block of `𝐅` for rule set `σ` and control `γ`.
    /// Panics when the system was built without noise.
    pub fn slice_f(&self, sigma: usize, gamma: usize) -> ArrayView2<'_, f64> {
        let f = self.f_aug.as_ref().expect("no noise matrices in this build");
        self.slice(f, self.n_modes() * self.plant.noise_dim(), sigma, gamma)
    }

    /// Successor joint state of `θ` under control `γ` and rule set `σ`
    /// (all 1-based): a column lookup in `L_σ`.
    pub fn succ(&self, sigma: usize, gamma: usize, theta: usize) -> usize {
        self.logic[sigma - 1].col((gamma - 1) * self.n_modes() + theta)
    }

    /// Embed `(θ, x)` as `v = θ⃗ ⊗ x`: `x` sits in block `θ`, zeros elsewhere.
    pub fn pack(&self, state: &HybridState) -> Result<Array1<f64>> {
        let n = self.plant.state_dim();
        if state.theta == 0 || state.theta > self.n_modes() {
            return Err(Error::DimensionMismatch {
                context: "pack",
                expected: format!("θ in [1, {}]", self.n_modes()),
                found: state.theta.to_string(),
            });
        }
        if state.x.len() != n {
            return Err(Error::DimensionMismatch {
                context: "pack",
                expected: format!("x of length {n}"),
                found: state.x.len().to_string(),
            });
        }
        let mut v = Array1::zeros(self.dim_v());
        v.slice_mut(s![(state.theta - 1) * n..state.theta * n])
            .assign(&state.x);
        Ok(v)
    }

    /// Invert [`pack`](Self::pack): recover `(θ, x)` from a lifted vector.
    /// Exactly one block may carry entries above [`UNPACK_TOL`] in absolute
    /// value; zero or several active blocks is an [`Error::AmbiguousBlock`].
    pub fn unpack(&self, v: &ArrayView1<f64>) -> Result<HybridState> {
        let n = self.plant.state_dim();
        if v.len() != self.dim_v() {
            return Err(Error::DimensionMismatch {
                context: "unpack",
                expected: format!("lifted vector of length {}", self.dim_v()),
                found: v.len().to_string(),
            });
        }
        let active: Vec<usize> = (0..self.n_modes())
            .filter(|&i| {
                v.slice(s![i * n..(i + 1) * n])
                    .iter()
                    .any(|e| e.abs() > UNPACK_TOL)
            })
            .map(|i| i + 1)
            .collect();
        match active.as_slice() {
            [theta] => Ok(HybridState {
                theta: *theta,
                x: v.slice(s![(theta - 1) * n..theta * n]).to_owned(),
            }),
            _ => Err(Error::AmbiguousBlock { blocks: active }),
        }
    }
}
