//! Rank, nullspace and least squares from a thin singular value
//! decomposition.
//!
//! The rank tolerance is `max(rows, cols) * sigma_max * f64::EPSILON`, the
//! usual choice for numerically revealing rank; callers can override it.

use nalgebra::{DMatrix, DVector};

/// Default singular value cutoff for `a`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * f64::EPSILON
}

/// Thin SVD of a matrix with the singular triplets above the tolerance.
#[derive(Debug, Clone)]
pub struct RankRevealing {
    cols: usize,
    /// Left singular vectors of the retained triplets (rows x rank).
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    /// Right singular vectors of the retained triplets (cols x rank).
    v: DMatrix<f64>,
    tol: f64,
}

impl RankRevealing {
    pub fn new(a: &DMatrix<f64>) -> Self {
        Self::with_tolerance(a, None)
    }

    pub fn with_tolerance(a: &DMatrix<f64>, tol: Option<f64>) -> Self {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return Self {
                cols,
                u: DMatrix::zeros(rows, 0),
                sigma: Vec::new(),
                v: DMatrix::zeros(cols, 0),
                tol: tol.unwrap_or(0.0),
            };
        }
        let (u_all, sigma_all, v_all) = jacobi_svd(a);
        let sigma_max = sigma_all.iter().cloned().fold(0.0, f64::max);
        let tol = tol.unwrap_or_else(|| rank_tolerance(rows, cols, sigma_max));
        let mut keep: Vec<usize> = (0..sigma_all.len()).filter(|&i| sigma_all[i] > tol).collect();
        keep.sort_by(|&i, &j| sigma_all[j].partial_cmp(&sigma_all[i]).unwrap());
        let u = u_all.select_columns(&keep);
        let v = v_all.select_columns(&keep);
        let sigma = keep.iter().map(|&i| sigma_all[i]).collect();
        Self { cols, u, sigma, v, tol }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Orthonormal basis of the row space (`cols x rank`).
    pub fn row_space(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    /// Minimum 2-norm minimiser of `|A x - rhs|_2`.
    pub fn least_squares(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.cols);
        for (k, s) in self.sigma.iter().enumerate() {
            let coeff = self.u.column(k).dot(rhs) / s;
            x.axpy(coeff, &self.v.column(k), 1.0);
        }
        x
    }

    /// Orthonormal basis of the kernel, `cols - rank` columns.
    ///
    /// The retained right singular vectors span the row space; a Householder
    /// QR of that block yields the orthogonal complement. Each column is
    /// signed so its first non-negligible entry is positive.
    pub fn nullspace(&self) -> DMatrix<f64> {
        let n = self.cols;
        let r = self.rank();
        let mut w = orthogonal_complement(&self.v, n, r);
        for mut col in w.column_iter_mut() {
            if let Some(first) = col.iter().find(|v| v.abs() > 1e-12).copied() {
                if first < 0.0 {
                    col.neg_mut();
                }
            }
        }
        w
    }
}

/// One-sided Jacobi SVD: `(u, sigma, v)` with `a = u diag(sigma) v^T`,
/// unsorted, `min(rows, cols)` triplets.
///
/// Rotations are applied to whichever side has fewer columns. Columns of
/// `u` belonging to zero singular values are left as zero vectors.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        let (u, s, v) = jacobi_svd(&a.transpose());
        return (v, s, u);
    }
    let n = a.ncols();
    let mut g = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = g.column(p).norm_squared();
                let beta = g.column(q).norm_squared();
                let gamma = g.column(p).dot(&g.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = (0..n).map(|j| g.column(j).norm()).collect();
    for (j, &s) in sigma.iter().enumerate() {
        if s > 0.0 {
            g.column_mut(j).unscale_mut(s);
        }
    }
    (g, sigma, v)
}

/// Columns `p, q` become `c p - s q` and `s p + c q`.
fn rotate(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

/// Last `n - r` columns of the full Q of a Householder QR of the `n x r`
/// orthonormal block `v`.
pub(crate) fn orthogonal_complement(v: &DMatrix<f64>, n: usize, r: usize) -> DMatrix<f64> {
    let d = n - r;
    if d == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mut work = v.clone();
    // Householder vectors, stored full length with zeros above the pivot.
    let mut reflectors: Vec<(DVector<f64>, f64)> = Vec::with_capacity(r);
    for k in 0..r {
        let mut h = DVector::zeros(n);
        for i in k..n {
            h[i] = work[(i, k)];
        }
        let alpha = h.rows(k, n - k).norm();
        if alpha == 0.0 {
            reflectors.push((h, 0.0));
            continue;
        }
        let sign = if h[k] >= 0.0 { 1.0 } else { -1.0 };
        h[k] += sign * alpha;
        let beta = 2.0 / h.norm_squared();
        for j in k..r {
            let dot: f64 = (k..n).map(|i| h[i] * work[(i, j)]).sum();
            for i in k..n {
                work[(i, j)] -= beta * dot * h[i];
            }
        }
        reflectors.push((h, beta));
    }
    // Q * [e_r .. e_{n-1}] = H_0 H_1 ... H_{r-1} E.
    let mut q = DMatrix::zeros(n, d);
    for j in 0..d {
        q[(r + j, j)] = 1.0;
    }
    for (k, (h, beta)) in reflectors.iter().enumerate().rev() {
        if *beta == 0.0 {
            continue;
        }
        for j in 0..d {
            let dot: f64 = (k..n).map(|i| h[i] * q[(i, j)]).sum();
            if dot != 0.0 {
                for i in k..n {
                    q[(i, j)] -= beta * dot * h[i];
                }
            }
        }
    }
    q
}

/// Number of singular values above the default tolerance.
pub fn numeric_rank(a: &DMatrix<f64>) -> usize {
    RankRevealing::new(a).rank()
}

/// Orthonormal basis of the kernel of `a` (empty when `a` has full column
/// rank).
pub fn nullspace_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    RankRevealing::new(a).nullspace()
}

/// Minimiser of `|a x - rhs|_2^2`; unique when `a` has full column rank,
/// otherwise the minimum-norm minimiser.
pub fn least_squares(a: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    RankRevealing::new(a).least_squares(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rank() {
        assert_eq!(numeric_rank(&DMatrix::identity(5, 5)), 5);
    }

    #[test]
    fn outer_product_rank_one() {
        let u = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let v = DVector::from_vec(vec![0.3, 1.0, -1.0]);
        assert_eq!(numeric_rank(&(&u * v.transpose())), 1);
    }

    #[test]
    fn zero_and_empty_matrices() {
        assert_eq!(numeric_rank(&DMatrix::zeros(3, 4)), 0);
        assert_eq!(nullspace_basis(&DMatrix::zeros(3, 4)).ncols(), 4);
        assert_eq!(nullspace_basis(&DMatrix::zeros(0, 3)).ncols(), 3);
        assert_eq!(least_squares(&DMatrix::zeros(0, 2), &DVector::zeros(0)).len(), 2);
    }

    #[test]
    fn full_rank_square_has_empty_kernel() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert_eq!(nullspace_basis(&a).ncols(), 0);
    }

    #[test]
    fn line_kernel() {
        let w = nullspace_basis(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(w.shape(), (2, 1));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((w[(0, 0)] - s).abs() < 1e-14);
        assert!((w[(1, 0)] + s).abs() < 1e-14);
    }

    #[test]
    fn ones_row_kernel_dimension() {
        let n = 9;
        let a = DMatrix::from_element(1, n, 1.0);
        let w = nullspace_basis(&a);
        assert_eq!(w.ncols(), n - 1);
        assert!((&a * &w).amax() < 1e-12);
        let gram = w.transpose() * &w;
        assert!((gram - DMatrix::identity(n - 1, n - 1)).amax() < 1e-12);
    }

    #[test]
    fn mean_of_observations() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let x = least_squares(&a, &DVector::from_vec(vec![0.0, 2.0]));
        assert!((x[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn square_solve_and_consistent_overdetermined() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = least_squares(&a, &(&a * &x0));
        assert!((&a * &x - &a * &x0).amax() < 1e-10);

        let tall = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let x0 = DVector::from_vec(vec![0.7, -0.2]);
        let x = least_squares(&tall, &(&tall * &x0));
        assert!((x - x0).amax() < 1e-12);
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        // x1 + x2 = 2: minimum-norm solution is (1, 1).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = least_squares(&a, &DVector::from_vec(vec![2.0]));
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_recomposes_both_orientations() {
        let mut state = 7u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for (r, c) in [(6, 4), (4, 6), (5, 5)] {
            let a = DMatrix::from_fn(r, c, |_, _| next());
            let (u, s, v) = jacobi_svd(&a);
            assert_eq!(s.len(), r.min(c));
            let back = &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * v.transpose();
            assert!((back - &a).amax() < 1e-14);
            assert!((v.transpose() * &v - DMatrix::identity(v.ncols(), v.ncols())).amax() < 1e-14);
        }
    }
}
