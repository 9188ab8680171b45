//! Small-matrix symmetric linear algebra: Cholesky solves and Jacobi
//! eigenvalues.
//!
//! Every factorization in this crate is on a small symmetric matrix (input
//! brackets of size m×m, cost-to-go blocks of size n×n), so hand-rolled
//! routines are simpler and more portable than pulling in a LAPACK backend.
//! Positive-definiteness guards are expressed as minimum-eigenvalue checks to
//! keep failure messages quantitative.

use ndarray::{Array1, Array2, ArrayView2};

/// Symmetrize in place: `K ← (K + Kᵀ)/2`. Controls round-off drift after
/// congruence updates; callers re-apply it after every Riccati step.
pub fn symmetrize(k: &mut Array2<f64>) {
    let n = k.nrows();
    debug_assert_eq!(n, k.ncols(), "symmetrize requires a square matrix");
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (k[[i, j]] + k[[j, i]]);
            k[[i, j]] = avg;
            k[[j, i]] = avg;
        }
    }
}

/// Maximum absolute asymmetry `max |K − Kᵀ|`, used by tests to bound drift.
pub fn asymmetry(k: &ArrayView2<f64>) -> f64 {
    let n = k.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((k[[i, j]] - k[[j, i]]).abs());
        }
    }
    worst
}

/// Cholesky factorization `A = L·Lᵀ` (lower-triangular `L`) of a symmetric
/// positive-definite matrix. Returns `None` when a pivot is not strictly
/// positive, i.e. the matrix is not numerically PD.
pub fn cholesky(a: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols(), "cholesky requires a square matrix");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Some(l)
}

/// Solve `A·X = B` for symmetric positive-definite `A` via Cholesky,
/// without forming `A⁻¹`. Returns `None` when `A` is not numerically PD.
pub fn solve_spd(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, b.nrows(), "solve_spd shape mismatch");
    let l = cholesky(a)?;
    let mut x = b.to_owned();
    // Forward substitution: L·Y = B.
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[[i, col]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        // Back substitution: Lᵀ·X = Y.
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    Some(x)
}

/// All eigenvalues of a symmetric matrix by the cyclic Jacobi method.
/// Robust and adequately fast for the small matrices used here.
pub fn symmetric_eigenvalues(a: &ArrayView2<f64>) -> Array1<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols(), "eigenvalues require a square matrix");
    let mut m = a.to_owned();
    // Scale-aware stopping threshold on off-diagonal mass.
    let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-15 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= f64::EPSILON * scale {
                    continue;
                }
                // Classic Jacobi rotation annihilating m[p,q].
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    m.diag().to_owned()
}

/// Minimum eigenvalue of a symmetric matrix; the positive-definiteness guard
/// compares this against its 1e-10 threshold.
pub fn min_symmetric_eigenvalue(a: &ArrayView2<f64>) -> f64 {
    symmetric_eigenvalues(a)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
