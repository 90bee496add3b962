//! Minimum 1-norm point of an affine solution space.

use nalgebra::{DMatrix, DVector};

use super::linalg::{orthogonal_complement, RankRevealing};
use super::simplex::{LpError, LpProblem, StandardForm, OPTIMALITY_TOL};

/// `{ x_sp + W y }`: the solutions of an underdetermined linear system.
#[derive(Debug, Clone)]
pub struct AffineSolutionSpace {
    /// Minimum-norm particular solution.
    pub particular: DVector<f64>,
    /// Orthonormal kernel basis, one column per free direction.
    pub basis: DMatrix<f64>,
    /// Orthonormal basis of the complement of `basis`, when already known.
    complement: Option<DMatrix<f64>>,
}

impl AffineSolutionSpace {
    pub fn new(particular: DVector<f64>, basis: DMatrix<f64>) -> Self {
        assert_eq!(
            particular.len(),
            basis.nrows(),
            "basis rows must match the particular solution"
        );
        Self {
            particular,
            basis,
            complement: None,
        }
    }

    /// Attach an orthonormal basis of the orthogonal complement of `basis`
    /// (for example the row space of the system matrix), so it is not
    /// recomputed.
    pub fn with_complement(mut self, complement: DMatrix<f64>) -> Self {
        assert_eq!(complement.nrows(), self.len(), "complement rows");
        assert_eq!(complement.ncols() + self.dim(), self.len(), "complement dimension");
        self.complement = Some(complement);
        self
    }

    /// Solution space of `a x = rhs` (in the least-squares sense if the system
    /// is inconsistent).
    pub fn from_system(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Self {
        Self::from_decomposition(&RankRevealing::new(a), rhs)
    }

    pub fn from_decomposition(svd: &RankRevealing, rhs: &DVector<f64>) -> Self {
        Self {
            particular: svd.least_squares(rhs),
            basis: svd.nullspace(),
            complement: Some(svd.row_space().clone()),
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn len(&self) -> usize {
        self.particular.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particular.is_empty()
    }

    pub fn point(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.particular + &self.basis * y
    }

    /// Orthogonal projection onto the space.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = self.basis.transpose() * (x - &self.particular);
        self.point(&y)
    }

    /// Linear program over `(y, s)` minimising `sum s` subject to
    /// `-s <= x_sp + W y <= s`, in the inequality form accepted by
    /// [`solve_lp`](super::solve_lp).
    pub fn l1_program(&self) -> LpProblem {
        let n = self.len();
        let d = self.dim();
        let mut a = DMatrix::zeros(2 * n, d + n);
        a.view_mut((0, 0), (n, d)).copy_from(&self.basis);
        a.view_mut((n, 0), (n, d)).copy_from(&(-&self.basis));
        for i in 0..n {
            a[(i, d + i)] = -1.0;
            a[(n + i, d + i)] = -1.0;
        }
        let mut b = DVector::zeros(2 * n);
        b.rows_mut(0, n).copy_from(&(-&self.particular));
        b.rows_mut(n, n).copy_from(&self.particular);
        let mut f = DVector::zeros(d + n);
        f.rows_mut(d, n).fill(1.0);
        LpProblem::new(f, a, b).expect("consistent l1 program")
    }
}

/// Point of the space with the smallest 1-norm.
///
/// Solves the program of [`AffineSolutionSpace::l1_program`] after
/// eliminating `y` and `s` analytically: with `V` spanning the complement
/// of `W`, the space is `{x : V^T x = V^T x_sp}`, and writing `x = u - v`
/// gives `min 1^T (u + v)` over `V^T (u - v) = V^T x_sp`, `u, v >= 0`, a
/// standard-form problem with only `n - D` rows.
pub fn min_l1_in_affine_space(space: &AffineSolutionSpace) -> Result<DVector<f64>, LpError> {
    if space.dim() == 0 {
        return Ok(space.particular.clone());
    }
    match &space.complement {
        Some(v) => min_l1_with_complement(&space.particular, v),
        None => min_l1_with_complement(
            &space.particular,
            &orthogonal_complement(&space.basis, space.len(), space.dim()),
        ),
    }
}

/// Same as [`min_l1_in_affine_space`] for the space `{x : V^T x = V^T x_sp}`
/// given only `V`, which skips forming the kernel basis.
pub(crate) fn min_l1_with_complement(particular: &DVector<f64>, v: &DMatrix<f64>) -> Result<DVector<f64>, LpError> {
    let n = particular.len();
    if v.ncols() == n {
        return Ok(particular.clone());
    }
    let vt = v.transpose();
    let h = &vt * particular;
    let rows = vt.nrows();
    let mut e = DMatrix::zeros(rows, 2 * n);
    e.view_mut((0, 0), (rows, n)).copy_from(&vt);
    e.view_mut((0, n), (rows, n)).copy_from(&(-&vt));
    let mut sf = StandardForm::new(&e, &h, &[]);
    sf.phase_one()?;
    sf.phase_two(&vec![1.0; 2 * n], OPTIMALITY_TOL)?;
    let w = sf.values();
    let x = w.rows(0, n) - w.rows(n, n);
    let drift = &vt * &x - h;
    Ok(x - v * drift)
}
