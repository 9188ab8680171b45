//! Semi-tensor product kernel.
//!
//! The semi-tensor product (STP, written `⋉`) generalizes matrix
//! multiplication to dimension-mismatched factors: for `A ∈ ℝ^{m×n}` and
//! `B ∈ ℝ^{p×q}` with `l = lcm(n, p)`,
//!
//! ```text
//! A ⋉ B = (A ⊗ I_{l/n}) (B ⊗ I_{l/p})
//! ```
//!
//! which reduces to the ordinary product when `n = p`. This module provides
//! the dense kernel (`stp`, `kron`, `khatri_rao`), the canonical/logical
//! matrix types with index-arithmetic fast paths, the power-reducing matrix
//! `Φ_k` (satisfying `x ⋉ x = Φ_k x` for canonical `x`), the vector/matrix
//! swap identity, and the STP derivative formulas used to verify feedback
//! gains by finite differences.

use crate::error::{Error, Result};
use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};

/// Dense real matrix. Row-major, finite entries; constructors that ingest
/// external data (`matrix_from_rows`, the config reader) reject NaN/Inf.
pub type Matrix = Array2<f64>;

/// Greatest common divisor (Euclid).
fn gcd(a: usize, b: usize) -> usize {
    let (mut a, mut b) = (a, b);
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Least common multiple; the padding dimension of the STP.
pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// `n×n` identity.
pub fn eye(n: usize) -> Matrix {
    Array2::eye(n)
}

/// Validated dense-matrix constructor: rectangular, non-empty, finite.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if r == 0 || c == 0 {
        return Err(Error::DimensionMismatch {
            context: "matrix_from_rows",
            expected: "at least one row and one column".into(),
            found: format!("{r}×{c}"),
        });
    }
    let mut m = Array2::<f64>::zeros((r, c));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::DimensionMismatch {
                context: "matrix_from_rows",
                expected: format!("{c} entries per row"),
                found: format!("{} entries in row {}", row.len(), i + 1),
            });
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::DimensionMismatch {
                    context: "matrix_from_rows",
                    expected: "finite entries".into(),
                    found: format!("{v} at ({},{})", i + 1, j + 1),
                });
            }
            m[[i, j]] = v;
        }
    }
    Ok(m)
}

/// View a vector as an `n×1` column matrix (owned copy; vectors here are tiny).
pub fn to_column(v: &ArrayView1<f64>) -> Matrix {
    Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i])
}

/// View a vector as a `1×n` row matrix.
pub fn to_row(v: &ArrayView1<f64>) -> Matrix {
    Array2::from_shape_fn((1, v.len()), |(_, j)| v[j])
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::<f64>::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == 0.0 {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[[i * br + p, j * bc + q]] = aij * b[[p, q]];
                }
            }
        }
    }
    out
}

/// Semi-tensor product `A ⋉ B`. Total on real matrices; equals `A·B` when
/// the inner dimensions already match.
pub fn stp(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.ncols();
    let p = b.nrows();
    if n == p {
        return a.dot(b);
    }
    let l = lcm(n, p);
    let a_pad = kron(a, &eye(l / n));
    let b_pad = kron(b, &eye(l / p));
    a_pad.dot(&b_pad)
}

/// Khatri–Rao product `A ∗ B`: column `j` of the result is
/// `(col_j A) ⊗ (col_j B)`. Composes nodal structure matrices into the
/// network structure matrix.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::ColumnMismatch {
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    let (ar, br, cols) = (a.nrows(), b.nrows(), a.ncols());
    let mut out = Array2::<f64>::zeros((ar * br, cols));
    for j in 0..cols {
        for i in 0..ar {
            let aij = a[[i, j]];
            if aij == 0.0 {
                continue;
            }
            for p in 0..br {
                out[[i * br + p, j]] = aij * b[[p, j]];
            }
        }
    }
    Ok(out)
}

/// `I_r ⊗ A`: the matrix satisfying the swap rule
/// `z ⋉ A = (I_r ⊗ A) ⋉ z` for every `z ∈ ℝ^r`, letting vectors commute
/// across matrices inside STP chains.
pub fn swap_matrix(r: usize, a: &Matrix) -> Matrix {
    kron(&eye(r), a)
}

/// Jacobian of `x ↦ A ⋉ x` for `x ∈ ℝ^{x_dim}`: `A ⊗ I_{l/q}` with
/// `q = cols(A)`, `l = lcm(q, x_dim)`.
pub fn stp_linear_grad(a: &Matrix, x_dim: usize) -> Matrix {
    let q = a.ncols();
    let l = lcm(q, x_dim);
    kron(a, &eye(l / q))
}

/// Gradient (row form) of the STP quadratic form `x ↦ xᵀ ⋉ A ⋉ x`:
///
/// ```text
/// ∂(xᵀ⋉A⋉x)/∂x = [ (δ_n^1)ᵀ⋉A⋉x  ⋯  (δ_n^n)ᵀ⋉A⋉x ] + xᵀ ⋉ Â,   Â = A ⊗ I_{l/q}
/// ```
///
/// with `l = lcm(cols(A), n)`. For square `A` with `cols(A) | n` the form is
/// scalar and this reduces to the familiar `xᵀ(Â + Âᵀ)`.
pub fn stp_quadratic_grad(a: &Matrix, x: &ArrayView1<f64>) -> Matrix {
    let n = x.len();
    let l = lcm(a.ncols(), n);
    let a_hat = kron(a, &eye(l / a.ncols()));
    let x_col = to_column(x);
    let blocks: Vec<Matrix> = (1..=n)
        .map(|i| {
            let e_row = to_row(&CanonicalVector::new(n, i).unwrap().to_dense().view());
            stp(&stp(&e_row, a), &x_col)
        })
        .collect();
    let views: Vec<_> = blocks.iter().map(Matrix::view).collect();
    let term1 = concatenate(Axis(1), &views).expect("uniform block heights");
    let term2 = stp(&to_row(x), &a_hat);
    debug_assert_eq!(term1.dim(), term2.dim(), "gradient term shapes must agree");
    term1 + term2
}

/// Canonical basis vector `δ_n^i` (1-based `index`), the vector form of a
/// logical value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanonicalVector {
    dim: usize,
    index: usize,
}

impl CanonicalVector {
    pub fn new(dim: usize, index: usize) -> Result<Self> {
        if dim == 0 || index == 0 || index > dim {
            return Err(Error::DimensionMismatch {
                context: "CanonicalVector::new",
                expected: format!("index in [1, {dim}]"),
                found: index.to_string(),
            });
        }
        Ok(Self { dim, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// 1-based position of the single unit entry.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn to_dense(&self) -> Array1<f64> {
        let mut v = Array1::<f64>::zeros(self.dim);
        v[self.index - 1] = 1.0;
        v
    }

    /// `δ_a^i ⋉ δ_b^j = δ_a^i ⊗ δ_b^j = δ_{ab}^{(i−1)b+j}`: STP of canonical
    /// vectors is index arithmetic.
    pub fn stp(&self, other: &CanonicalVector) -> CanonicalVector {
        CanonicalVector {
            dim: self.dim * other.dim,
            index: (self.index - 1) * other.dim + other.index,
        }
    }
}

/// Column-index-compact representation of a logical matrix: every column is
/// a canonical basis vector of `ℝ^rows`, stored as its 1-based index. Houses
/// structure matrices, the power-reducing matrix, and canonical vectors; all
/// products of logical matrices stay logical, so composition is pure index
/// arithmetic (`O(columns)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalMatrix {
    rows: usize,
    col_indices: Vec<usize>,
}

impl LogicalMatrix {
    pub fn new(rows: usize, col_indices: Vec<usize>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::DimensionMismatch {
                context: "LogicalMatrix::new",
                expected: "rows ≥ 1".into(),
                found: "0".into(),
            });
        }
        if let Some(&bad) = col_indices.iter().find(|&&i| i == 0 || i > rows) {
            return Err(Error::DimensionMismatch {
                context: "LogicalMatrix::new",
                expected: format!("column indices in [1, {rows}]"),
                found: bad.to_string(),
            });
        }
        Ok(Self { rows, col_indices })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            col_indices: (1..=n).collect(),
        }
    }

    /// One-column logical matrix equal to the canonical vector.
    pub fn from_canonical(v: CanonicalVector) -> Self {
        Self {
            rows: v.dim(),
            col_indices: vec![v.index()],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.col_indices.len()
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// 1-based row index of the unit entry in 1-based column `j`.
    pub fn col(&self, j: usize) -> usize {
        self.col_indices[j - 1]
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Array2::<f64>::zeros((self.rows, self.cols()));
        for (j, &i) in self.col_indices.iter().enumerate() {
            m[[i - 1, j]] = 1.0;
        }
        m
    }

    /// Ordinary product of conformable logical matrices:
    /// `(P·Q) col j = P col (Q col j)`.
    pub fn mul_logical(&self, rhs: &LogicalMatrix) -> Result<LogicalMatrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::DimensionMismatch {
                context: "LogicalMatrix::mul_logical",
                expected: format!("{} rows in right factor", self.cols()),
                found: rhs.rows().to_string(),
            });
        }
        let col_indices = rhs
            .col_indices
            .iter()
            .map(|&q| self.col_indices[q - 1])
            .collect();
        Ok(LogicalMatrix {
            rows: self.rows,
            col_indices,
        })
    }

    /// Kronecker product of logical matrices (logical again):
    /// entry index `(i−1)·rows(rhs) + j` at column `(p−1)·cols(rhs) + q`.
    pub fn kron_logical(&self, rhs: &LogicalMatrix) -> LogicalMatrix {
        let mut col_indices = Vec::with_capacity(self.cols() * rhs.cols());
        for &i in &self.col_indices {
            for &j in &rhs.col_indices {
                col_indices.push((i - 1) * rhs.rows + j);
            }
        }
        LogicalMatrix {
            rows: self.rows * rhs.rows,
            col_indices,
        }
    }

    /// Semi-tensor product of logical matrices via the index fast path:
    /// pad both factors with `⊗ I` to the lcm dimension (padding keeps them
    /// logical) and compose indices. Verified against the dense kernel by
    /// property tests.
    pub fn stp_logical(&self, rhs: &LogicalMatrix) -> LogicalMatrix {
        let l = lcm(self.cols(), rhs.rows());
        let a = self.kron_logical(&LogicalMatrix::identity(l / self.cols()));
        let b = rhs.kron_logical(&LogicalMatrix::identity(l / rhs.rows()));
        a.mul_logical(&b).expect("padded factors are conformable")
    }

    /// Khatri–Rao product of logical matrices (logical again):
    /// column `j` has index `(P col j − 1)·rows(rhs) + (Q col j)`.
    pub fn khatri_rao_logical(&self, rhs: &LogicalMatrix) -> Result<LogicalMatrix> {
        if self.cols() != rhs.cols() {
            return Err(Error::ColumnMismatch {
                left: self.cols(),
                right: rhs.cols(),
            });
        }
        let col_indices = self
            .col_indices
            .iter()
            .zip(&rhs.col_indices)
            .map(|(&i, &j)| (i - 1) * rhs.rows + j)
            .collect();
        Ok(LogicalMatrix {
            rows: self.rows * rhs.rows,
            col_indices,
        })
    }

    /// Horizontal concatenation `[L₁ L₂ ⋯]`; all blocks must share `rows`.
    pub fn hconcat(blocks: &[LogicalMatrix]) -> Result<LogicalMatrix> {
        let rows = blocks
            .first()
            .map(|b| b.rows)
            .ok_or(Error::DimensionMismatch {
                context: "LogicalMatrix::hconcat",
                expected: "at least one block".into(),
                found: "0 blocks".into(),
            })?;
        let mut col_indices = Vec::new();
        for b in blocks {
            if b.rows != rows {
                return Err(Error::DimensionMismatch {
                    context: "LogicalMatrix::hconcat",
                    expected: format!("{rows} rows"),
                    found: b.rows.to_string(),
                });
            }
            col_indices.extend_from_slice(&b.col_indices);
        }
        Ok(LogicalMatrix { rows, col_indices })
    }
}

/// Power-reducing matrix `Φ_k ∈ L_{k²×k}`: `x ⋉ x = Φ_k x` for every
/// canonical `x ∈ Δ_k`; column `i` carries index `(i−1)k + i`.
pub fn power_reducing(k: usize) -> LogicalMatrix {
    LogicalMatrix {
        rows: k * k,
        col_indices: (1..=k).map(|i| (i - 1) * k + i).collect(),
    }
}
