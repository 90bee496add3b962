//! Reconstruction of the nodal susceptance matrix from angle and injection
//! snapshots.
//!
//! Row `r` of `B` satisfies `sum_c B_rc phi_c(t) = P_r(t)` for every
//! snapshot together with the row-sum condition `sum_c B_rc = 0`. Stacking
//! gives the row problem `Phi B_r = P_r` with `M + 1` equations. When `Phi`
//! has full column rank the row is the least-squares solution; otherwise the
//! row is the sparsest-looking (minimum 1-norm) point of the solution space.

mod iterative;

pub use iterative::reconstruct_iterative;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dc::MeasurementSet;
use crate::grid::{
    KnowledgeMask, ReconstructionOutcome, ReconstructionReport, RowResolution, RowStatus, SusceptanceMatrix,
    RELATIVE_ZERO_TOL,
};
use crate::solver::{min_l1_with_complement, LpError, RankRevealing};

/// Default sparsity bound on an accepted row.
pub const DEFAULT_D_MAX: usize = 15;

#[derive(Debug, Error)]
pub enum ReconstructionError {
    #[error("measurements contain non-finite values")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no measurements")]
    Empty,
    #[error("d_max must be at least 1")]
    InvalidPolicy,
}

/// Acceptance rule for underdetermined rows in the iterative algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessPolicy {
    /// Largest number of nonzero entries (diagonal included) an accepted
    /// 1-norm solution may have.
    pub d_max: usize,
    /// Magnitude below which an entry counts as zero. `None` means
    /// `1e-3` times the largest known magnitude in the row's context.
    pub epsilon_zero: Option<f64>,
}

impl Default for SuccessPolicy {
    fn default() -> Self {
        Self {
            d_max: DEFAULT_D_MAX,
            epsilon_zero: None,
        }
    }
}

impl SuccessPolicy {
    pub fn with_d_max(d_max: usize) -> Result<Self, ReconstructionError> {
        if d_max == 0 {
            return Err(ReconstructionError::InvalidPolicy);
        }
        Ok(Self {
            d_max,
            epsilon_zero: None,
        })
    }
}

/// Stacked linear system for one row of `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProblem {
    phi_matrix: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl RowProblem {
    /// Wrap an explicit system. The last row must be the all-ones row-sum
    /// condition with zero right-hand side.
    pub fn new(phi_matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, ReconstructionError> {
        if phi_matrix.nrows() != rhs.len() {
            return Err(ReconstructionError::ShapeMismatch(format!(
                "{} equations but {} right-hand sides",
                phi_matrix.nrows(),
                rhs.len()
            )));
        }
        if phi_matrix.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(ReconstructionError::NonFinite);
        }
        Ok(Self { phi_matrix, rhs })
    }

    pub fn phi_matrix(&self) -> &DMatrix<f64> {
        &self.phi_matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn n_unknowns(&self) -> usize {
        self.phi_matrix.ncols()
    }

    pub fn n_equations(&self) -> usize {
        self.phi_matrix.nrows()
    }

    /// `max |Phi x - rhs|`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (&self.phi_matrix * x - &self.rhs).amax()
    }
}

/// `Phi` extended by the all-ones row.
pub(crate) fn stacked_phi(ms: &MeasurementSet) -> DMatrix<f64> {
    let (m, n) = (ms.m(), ms.n());
    let mut phi = DMatrix::zeros(m + 1, n);
    phi.rows_mut(0, m).copy_from(ms.phi());
    phi.row_mut(m).fill(1.0);
    phi
}

pub(crate) fn stacked_rhs(ms: &MeasurementSet, r: usize) -> DVector<f64> {
    let m = ms.m();
    let mut rhs = DVector::zeros(m + 1);
    rhs.rows_mut(0, m).copy_from(&ms.p().column(r));
    rhs
}

pub(crate) fn check_measurements(ms: &MeasurementSet) -> Result<(), ReconstructionError> {
    if ms.m() == 0 || ms.n() == 0 {
        return Err(ReconstructionError::Empty);
    }
    if ms.phi().iter().chain(ms.p().iter()).any(|v| !v.is_finite()) {
        return Err(ReconstructionError::NonFinite);
    }
    Ok(())
}

pub fn build_row_problem(ms: &MeasurementSet, r: usize) -> RowProblem {
    assert!(r < ms.n(), "row {r} out of range for {} buses", ms.n());
    RowProblem {
        phi_matrix: stacked_phi(ms),
        rhs: stacked_rhs(ms, r),
    }
}

/// Row problem restricted to the unknown entries of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRow {
    pub problem: RowProblem,
    /// Original column index of each reduced column.
    pub columns: Vec<usize>,
}

impl ReducedRow {
    /// Full row from the known entries of `b_known` and the reduced solution.
    pub fn expand(&self, b_known: &SusceptanceMatrix, r: usize, solution: &DVector<f64>) -> DVector<f64> {
        let mut row = DVector::from_iterator(b_known.n(), b_known.matrix().row(r).iter().copied());
        for (&c, v) in self.columns.iter().zip(solution.iter()) {
            row[c] = *v;
        }
        row
    }
}

/// Move the known entries of row `r` to the right-hand side and drop their
/// columns.
pub fn reduce_row_problem(p: &RowProblem, b_known: &SusceptanceMatrix, k: &KnowledgeMask, r: usize) -> ReducedRow {
    let n = p.n_unknowns();
    assert_eq!(b_known.n(), n, "susceptance matrix size");
    assert_eq!(k.n(), n, "knowledge mask size");
    let mut rhs = p.rhs.clone();
    let mut columns = Vec::new();
    for c in 0..n {
        if k.is_known(r, c) {
            let v = b_known.get(r, c);
            if v != 0.0 {
                rhs.axpy(-v, &p.phi_matrix.column(c), 1.0);
            }
        } else {
            columns.push(c);
        }
    }
    ReducedRow {
        problem: RowProblem {
            phi_matrix: p.phi_matrix.select_columns(&columns),
            rhs,
        },
        columns,
    }
}

/// Which branch produced a row solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowBranch {
    /// `rank(Phi)` covers every unknown; least-squares solution.
    Overdetermined,
    /// Minimum 1-norm point of the solution space.
    MinimumL1,
}

#[derive(Debug, Clone)]
pub struct RowSolution {
    pub values: DVector<f64>,
    pub branch: RowBranch,
}

pub fn reconstruct_row(p: &RowProblem) -> Result<RowSolution, LpError> {
    solve_with(&RankRevealing::new(&p.phi_matrix), &p.rhs)
}

pub(crate) fn solve_with(svd: &RankRevealing, rhs: &DVector<f64>) -> Result<RowSolution, LpError> {
    if svd.rank() >= svd.ncols() {
        return Ok(RowSolution {
            values: svd.least_squares(rhs),
            branch: RowBranch::Overdetermined,
        });
    }
    Ok(RowSolution {
        values: min_l1_with_complement(&svd.least_squares(rhs), svd.row_space())?,
        branch: RowBranch::MinimumL1,
    })
}

/// Row-wise algorithm: every row solved independently from the full system.
/// Symmetry is not imposed.
pub fn reconstruct_rowwise(ms: &MeasurementSet) -> Result<ReconstructionReport, ReconstructionError> {
    check_measurements(ms)?;
    let n = ms.n();
    let phi = stacked_phi(ms);
    let svd = RankRevealing::new(&phi);
    let full_rank = svd.rank() >= n;
    let mut b = DMatrix::zeros(n, n);
    let mut rows = Vec::with_capacity(n);
    for r in 0..n {
        let rhs = stacked_rhs(ms, r);
        let particular = svd.least_squares(&rhs);
        let (values, resolution) = if full_rank {
            (particular, RowResolution::Overdetermined)
        } else {
            match min_l1_with_complement(&particular, svd.row_space()) {
                Ok(x) => (x, RowResolution::SparseAccepted),
                Err(e) => {
                    log::warn!("row {r}: 1-norm minimisation failed: {e}");
                    (particular, RowResolution::Failed)
                }
            }
        };
        b.row_mut(r).copy_from(&values.transpose());
        rows.push(RowStatus {
            row: r,
            resolution,
            unknown_columns: if resolution == RowResolution::Failed {
                (0..n).collect()
            } else {
                Vec::new()
            },
        });
    }
    let failed = rows.iter().any(|s| s.resolution == RowResolution::Failed);
    Ok(ReconstructionReport {
        b_estimate: SusceptanceMatrix::from_matrix(b).map_err(|_| ReconstructionError::NonFinite)?,
        known: KnowledgeMask::all(n),
        outcome: if failed {
            ReconstructionOutcome::Stalled
        } else {
            ReconstructionOutcome::Complete
        },
        n_iterations: 1,
        known_history: vec![n * n],
        rows,
        entry_success: None,
        error_count: None,
    })
}

/// Per-entry comparison against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub epsilon: f64,
    pub error_count: usize,
    pub success: DMatrix<bool>,
}

/// Count entries with `|B_rec - B_true| >= epsilon` over the full matrix.
/// The default tolerance is `1e-3 * max |B_true|`. Entries left unknown by
/// the run count as errors.
pub fn verify_against_truth(
    report: &ReconstructionReport,
    truth: &SusceptanceMatrix,
    epsilon: Option<f64>,
) -> Result<Verification, ReconstructionError> {
    let n = truth.n();
    if report.b_estimate.n() != n {
        return Err(ReconstructionError::ShapeMismatch(format!(
            "estimate is {0}x{0}, truth is {n}x{n}",
            report.b_estimate.n()
        )));
    }
    let epsilon = epsilon.unwrap_or_else(|| RELATIVE_ZERO_TOL * truth.max_abs());
    let success = DMatrix::from_fn(n, n, |r, c| {
        report.known.is_known(r, c) && (report.b_estimate.get(r, c) - truth.get(r, c)).abs() < epsilon
    });
    let error_count = success.iter().filter(|&&ok| !ok).count();
    Ok(Verification {
        epsilon,
        error_count,
        success,
    })
}

impl ReconstructionReport {
    /// Attach a verification result to the report.
    pub fn with_verification(mut self, v: &Verification) -> Self {
        self.entry_success = Some(v.success.clone());
        self.error_count = Some(v.error_count);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::gen_type1;
    use crate::grid::{build_susceptance, bundled, GridTopology, Line};

    fn path3() -> SusceptanceMatrix {
        build_susceptance(&GridTopology::new(3, vec![Line::new(0, 1, 1.0), Line::new(1, 2, 0.5)]).unwrap())
    }

    #[test]
    fn row_problem_shape() {
        let ms = gen_type1(&path3(), 2, 1);
        let p = build_row_problem(&ms, 1);
        assert_eq!(p.phi_matrix().shape(), (3, 3));
        assert!(p.phi_matrix().row(2).iter().all(|&v| v == 1.0));
        for r in 0..3 {
            assert_eq!(build_row_problem(&ms, r).rhs()[2], 0.0);
        }
    }

    #[test]
    fn true_row_satisfies_problem() {
        let b = build_susceptance(&bundled::ieee14());
        let ms = gen_type1(&b, 5, 3);
        for r in 0..14 {
            let p = build_row_problem(&ms, r);
            let row = b.matrix().row(r).transpose();
            assert!(p.residual(&row) < 1e-10);
        }
    }

    #[test]
    fn determined_row_exact() {
        let b = build_susceptance(&bundled::ieee14());
        let ms = gen_type1(&b, 13, 4);
        let p = build_row_problem(&ms, 5);
        let s = reconstruct_row(&p).unwrap();
        assert_eq!(s.branch, RowBranch::Overdetermined);
        let row = b.matrix().row(5).transpose();
        assert!((s.values - row).amax() < 1e-8);
    }

    #[test]
    fn reduction_with_everything_known() {
        let b = path3();
        let ms = gen_type1(&b, 2, 5);
        let p = build_row_problem(&ms, 0);
        let red = reduce_row_problem(&p, &b, &KnowledgeMask::all(3), 0);
        assert!(red.columns.is_empty());
        assert!(red.problem.rhs().amax() < 1e-12);
    }

    #[test]
    fn reduction_with_nothing_known_is_identity() {
        let b = path3();
        let ms = gen_type1(&b, 2, 5);
        let p = build_row_problem(&ms, 0);
        let red = reduce_row_problem(&p, &SusceptanceMatrix::zeros(3), &KnowledgeMask::none(3), 0);
        assert_eq!(red.columns, vec![0, 1, 2]);
        assert_eq!(red.problem, p);
    }

    #[test]
    fn three_bus_hand_reduction() {
        // Row 0 of the path with B_01 known: unknowns B_00 and B_02.
        // Equations: B_00 phi_0 + B_02 phi_2 = P_0 - B_01 phi_1 and
        // B_00 + B_02 = -B_01, a 2x2 system for M = 1.
        let b = path3();
        let ms = gen_type1(&b, 1, 6);
        let k = KnowledgeMask::from_pairs(3, |r, c| (r, c) == (0, 1));
        let p = build_row_problem(&ms, 0);
        let red = reduce_row_problem(&p, &b, &k, 0);
        assert_eq!(red.columns, vec![0, 2]);
        let s = reconstruct_row(&red.problem).unwrap();
        assert_eq!(s.branch, RowBranch::Overdetermined);
        assert!((s.values[0] - 1.0).abs() < 1e-10);
        assert!(s.values[1].abs() < 1e-10);
    }

    #[test]
    fn reduced_truth_reproduces_rhs() {
        let b = build_susceptance(&bundled::ieee30());
        let ms = gen_type1(&b, 4, 8);
        let k = KnowledgeMask::from_pairs(30, |r, c| (r + c) % 3 == 0);
        for r in [0, 7, 29] {
            let red = reduce_row_problem(&build_row_problem(&ms, r), &b, &k, r);
            let x = DVector::from_iterator(red.columns.len(), red.columns.iter().map(|&c| b.get(r, c)));
            assert!(red.problem.residual(&x) < 1e-10);
        }
    }

    #[test]
    fn verification_counts_entries() {
        let b = path3();
        let ms = gen_type1(&b, 3, 2);
        let report = reconstruct_rowwise(&ms).unwrap();
        let v = verify_against_truth(&report, &b, None).unwrap();
        assert_eq!(v.error_count, 0);

        let eps = 1e-3 * b.max_abs();
        let mut off = b.matrix().clone();
        off[(0, 1)] += 2.0 * eps;
        let mut shifted = report.clone();
        shifted.b_estimate = SusceptanceMatrix::from_matrix(off.clone()).unwrap();
        assert_eq!(verify_against_truth(&shifted, &b, None).unwrap().error_count, 1);
        off[(1, 0)] += 2.0 * eps;
        shifted.b_estimate = SusceptanceMatrix::from_matrix(off).unwrap();
        assert_eq!(verify_against_truth(&shifted, &b, None).unwrap().error_count, 2);
    }

    #[test]
    fn rowwise_rejects_empty() {
        let ms = MeasurementSet::new(DMatrix::zeros(0, 3), DMatrix::zeros(0, 3)).unwrap();
        assert!(matches!(reconstruct_rowwise(&ms), Err(ReconstructionError::Empty)));
    }

    #[test]
    fn policy_validation() {
        assert!(SuccessPolicy::with_d_max(0).is_err());
        assert_eq!(SuccessPolicy::default().d_max, 15);
    }
}
