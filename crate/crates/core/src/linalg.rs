//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Singular values below this fraction of the largest are dropped by
/// [`solve_or_pinv`].
pub const PINV_CUTOFF: f64 = 1e-10;

/// Thin singular value decomposition `m = U diag(σ) Vᵀ` by one-sided
/// Jacobi rotations. Singular values come out in decreasing order.
///
/// nalgebra's bidiagonal SVD occasionally returns factors that do not
/// reconstruct the input beyond a few digits, which the naturality checks
/// cannot absorb; Jacobi is slower but accurate to roundoff in every
/// singular value, including the small ones.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    /// `cols × k` with orthonormal columns.
    pub v: DMatrix<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 60;

pub fn svd(m: &DMatrix<f64>) -> Svd {
    if m.nrows() < m.ncols() {
        let t = svd(&m.transpose());
        return Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    let (rows, n) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(rows, n);
    let mut vs = DMatrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(a.column(j) / norms[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    Svd {
        u,
        singular_values: DVector::from_iterator(n, order.iter().map(|&j| norms[j])),
        v: vs,
    }
}

fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    svd(m).singular_values
}

/// `σ_max / σ_min`, infinite for singular (or empty-rank) matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = singular_values(m);
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Result of a possibly rank-deficient linear solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    /// Set when singular values were cut and the pseudo-inverse was used.
    pub truncated: bool,
}

/// Solve `m x = b` by LU when `m` is numerically full rank, otherwise apply
/// the pseudo-inverse with relative cutoff [`PINV_CUTOFF`].
pub fn solve_or_pinv(m: &DMatrix<f64>, b: &DVector<f64>) -> Solution {
    let d = svd(m);
    let max = d.singular_values.max();
    if max > 0.0 && d.singular_values.min() >= PINV_CUTOFF * max {
        if let Some(x) = m.clone().lu().solve(b) {
            return Solution {
                x,
                truncated: false,
            };
        }
    }
    let cutoff = PINV_CUTOFF * max;
    let mut coeffs = d.u.transpose() * b;
    for (c, &s) in coeffs.iter_mut().zip(d.singular_values.iter()) {
        *c = if s > cutoff && s > 0.0 { *c / s } else { 0.0 };
    }
    Solution {
        x: d.v * coeffs,
        truncated: true,
    }
}

/// Solve `BᵀB x = b` from an SVD of `B`, with the same relative cutoff on
/// the eigenvalues `σ²` of `BᵀB` as [`solve_or_pinv`].
pub fn solve_gram(factor: &DMatrix<f64>, b: &DVector<f64>) -> Solution {
    let n = factor.ncols();
    let d = svd(factor);
    let sq = d.singular_values.map(|s| s * s);
    let max = if sq.is_empty() { 0.0 } else { sq.max() };
    let cutoff = PINV_CUTOFF * max;
    // Directions of the null space of B are missing from a thin SVD.
    let truncated = sq.len() < n || max <= 0.0 || max.is_nan() || sq.iter().any(|&s| s < cutoff);
    let mut coeffs = d.v.transpose() * b;
    for (c, &s) in coeffs.iter_mut().zip(sq.iter()) {
        *c = if s > cutoff && s > 0.0 { *c / s } else { 0.0 };
    }
    Solution {
        x: d.v * coeffs,
        truncated,
    }
}

pub fn inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().try_inverse()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve_is_exact() {
        let b = DVector::from_vec(vec![0.1, -3.7, 2.2]);
        let s = solve_or_pinv(&DMatrix::identity(3, 3), &b);
        assert!(!s.truncated);
        assert_eq!(s.x, b);
    }

    #[test]
    fn rank_deficient_uses_pseudo_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let s = solve_or_pinv(&m, &DVector::from_vec(vec![2.0, 2.0]));
        assert!(s.truncated);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let s = solve_or_pinv(&DMatrix::zeros(2, 2), &DVector::from_vec(vec![1.0, 1.0]));
        assert!(s.truncated);
        assert_eq!(s.x, DVector::zeros(2));
    }

    #[test]
    fn svd_reconstructs() {
        let m = DMatrix::from_fn(7, 3, |i, j| {
            ((i * 5 + j * 11) as f64).sin() * 10f64.powi(-(2 * j as i32))
        });
        for a in [m.clone(), m.transpose()] {
            let d = svd(&a);
            let back = &d.u * DMatrix::from_diagonal(&d.singular_values) * d.v.transpose();
            assert!(max_abs(&(back - &a)) < 1e-14);
            assert!(d
                .singular_values
                .as_slice()
                .windows(2)
                .all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn gram_solve_matches_normal_equations() {
        let b = DMatrix::from_fn(6, 3, |i, j| {
            ((i + 2 * j) as f64).cos() + if i == j { 2.0 } else { 0.0 }
        });
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let s = solve_gram(&b, &rhs);
        assert!(!s.truncated);
        assert!((b.transpose() * &b * &s.x - rhs).norm() < 1e-12);
    }

    #[test]
    fn condition_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.5]));
        assert!((condition_number(&m) - 8.0).abs() < 1e-12);
        assert!(condition_number(&DMatrix::zeros(2, 2)).is_infinite());
    }
}
