//! Jacobi-based SVD and symmetric eigendecomposition.
//!
//! Left singular vectors come from a one-sided (Hestenes) Jacobi sweep over
//! the *rows* of the input: plane rotations are applied to pairs of rows
//! until all rows are mutually orthogonal, and the accumulated rotation is
//! the left factor. Unfoldings here are short and wide (`12 x 4096`,
//! `64 x 768`), so each sweep costs `O(rows² · cols)` and the squared
//! conditioning of the Gram-matrix route is avoided.
//!
//! Both routines stop when every off-diagonal quantity is below `1e-12`
//! relative and give up after `100 · n` sweeps with
//! [`CraftError::Convergence`].
//!
//! Sign convention: every returned vector has its largest-magnitude entry
//! positive (first such entry on exact ties).

use crate::error::{CraftError, Result};
use crate::tensor::{dot, Matrix};

const TOLERANCE: f64 = 1e-12;
const SWEEPS_PER_DIM: usize = 100;

/// Leading left singular vectors and values of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `rows x r`, orthonormal columns.
    pub left_vectors: Matrix,
    /// Nonincreasing, length `r`.
    pub singular_values: Vec<f64>,
}

/// Full spectral decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

/// Leading `r` left singular vectors of `m`, `1 <= r <= min(rows, cols)`.
pub fn truncated_svd(m: &Matrix, r: usize) -> Result<TruncatedSvd> {
    let max = m.rows().min(m.cols());
    if r == 0 || r > max {
        return Err(CraftError::InvalidParameter {
            name: "rank",
            reason: format!(
                "{r} not in 1..={max} for a {}x{} matrix",
                m.rows(),
                m.cols()
            ),
        });
    }
    leading_left_vectors(m, r)
}

/// Like [`truncated_svd`] but accepts any `r <= rows`.
///
/// When `r` exceeds the column count the trailing vectors complete an
/// orthonormal basis of the null space of `mᵀ`, with zero singular values.
pub(crate) fn leading_left_vectors(m: &Matrix, r: usize) -> Result<TruncatedSvd> {
    let rows = m.rows();
    assert!(r >= 1 && r <= rows, "rank must be in 1..=rows");
    let (q, norms) = row_jacobi(m)?;

    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let mut left = vec![0.0; rows * r];
    let mut singular_values = Vec::with_capacity(r);
    for (c, &src) in order.iter().take(r).enumerate() {
        let col = q.column(src);
        let flip = if sign_of_largest(&col) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for (i, v) in col.iter().enumerate() {
            left[i * r + c] = flip * v;
        }
        singular_values.push(norms[src]);
    }
    Ok(TruncatedSvd {
        left_vectors: Matrix::from_raw(rows, r, left),
        singular_values,
    })
}

/// All singular values of `m`'s row space, nonincreasing, length `rows`.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let (_, mut norms) = row_jacobi(m)?;
    norms.sort_by(|a, b| b.total_cmp(a));
    Ok(norms)
}

fn sign_of_largest(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best
}

/// Orthogonalises the rows of `m`. Returns the accumulated rotation `Q`
/// (`m = Q B`, rows of `B` orthogonal) and the row norms of `B`.
fn row_jacobi(m: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let rows = m.rows();
    let cols = m.cols();
    let mut b = m.as_slice().to_vec();
    let mut q = Matrix::identity(rows);
    let scale = m.frobenius_norm();
    // Pairs of rows whose norm product sits below this are pure round-off.
    let negligible = (1e-15 * scale) * (1e-15 * scale);

    let max_sweeps = SWEEPS_PER_DIM * rows.max(1);
    let mut residual = 0.0;
    for _ in 0..max_sweeps {
        residual = 0.0f64;
        let mut rotated = false;
        for p in 0..rows {
            for r in p + 1..rows {
                let (head, tail) = b.split_at_mut(r * cols);
                let bp = &mut head[p * cols..(p + 1) * cols];
                let br = &mut tail[..cols];
                let alpha = dot(bp, bp);
                let beta = dot(br, br);
                let gamma = dot(bp, br);
                let norm_prod = (alpha * beta).sqrt();
                if norm_prod <= negligible || gamma == 0.0 {
                    continue;
                }
                let off = gamma.abs() / norm_prod;
                residual = residual.max(off);
                if off <= TOLERANCE {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for (x, y) in bp.iter_mut().zip(br.iter_mut()) {
                    let (xp, yp) = (*x, *y);
                    *x = c * xp - s * yp;
                    *y = s * xp + c * yp;
                }
                let qd = q.as_mut_slice();
                for i in 0..rows {
                    let (xp, yp) = (qd[i * rows + p], qd[i * rows + r]);
                    qd[i * rows + p] = c * xp - s * yp;
                    qd[i * rows + r] = s * xp + c * yp;
                }
            }
        }
        if !rotated {
            let norms = b.chunks(cols).map(|row| dot(row, row).sqrt()).collect();
            return Ok((q, norms));
        }
    }
    Err(CraftError::Convergence {
        routine: "one-sided Jacobi SVD",
        sweeps: max_sweeps,
        residual,
        mode: None,
    })
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eig(a: &Matrix) -> Result<EigResult> {
    let n = a.rows();
    if a.cols() != n {
        return Err(CraftError::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let max_abs = a.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut asymmetry = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asymmetry = asymmetry.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if asymmetry > 1e-12 * max_abs.max(1.0) {
        return Err(CraftError::NotSymmetric { asymmetry });
    }

    let mut m = a.as_slice().to_vec();
    // symmetrise exactly so the rotations see one consistent matrix
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = Matrix::identity(n);
    let total = a.frobenius_norm();
    let off_norm = |m: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let max_sweeps = SWEEPS_PER_DIM * n;
    let mut converged = false;
    for _ in 0..max_sweeps {
        if off_norm(&m) <= TOLERANCE * total {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[r * n + p];
                    let arq = m[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = c * arq + s * arp;
                    m[r * n + p] = new_rp;
                    m[p * n + r] = new_rp;
                    m[r * n + q] = new_rq;
                    m[q * n + r] = new_rq;
                }
                let vd = v.as_mut_slice();
                for r in 0..n {
                    let vrp = vd[r * n + p];
                    let vrq = vd[r * n + q];
                    vd[r * n + p] = c * vrp - s * vrq;
                    vd[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    if !converged && off_norm(&m) > TOLERANCE * total {
        return Err(CraftError::Convergence {
            routine: "Jacobi eigendecomposition",
            sweeps: max_sweeps,
            residual: off_norm(&m) / total,
            mode: None,
        });
    }

    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| diag[y].total_cmp(&diag[x]));
    let mut vectors = vec![0.0; n * n];
    for (c, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let flip = if sign_of_largest(&col) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for (i, x) in col.iter().enumerate() {
            vectors[i * n + c] = flip * x;
        }
    }
    Ok(EigResult {
        eigenvalues: order.iter().map(|&i| diag[i]).collect(),
        eigenvectors: Matrix::from_raw(n, n, vectors),
    })
}
