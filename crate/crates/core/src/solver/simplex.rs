//! Dense two-phase simplex for `min f^T x  s.t.  A x <= b` with `x` free.
//!
//! The free variables are eliminated before any pivoting. Gaussian
//! elimination with partial pivoting on the tall matrix `A` selects `r`
//! pivot rows `T` and pivot columns `P`. With slacks `w = b - A x >= 0`,
//!
//! ```text
//! x_P = A_TP^-1 (b_T - w_T)
//! w_R = h + G w_T,   G = A_RP A_TP^-1,   h = b_R - G b_T
//! f^T x = g^T b_T - g^T w_T,   g = A_TP^-T f_P
//! ```
//!
//! which is a standard-form problem in `w >= 0` with only `m - r` equality
//! rows. Columns of `A` outside `P` are linearly dependent; they stay at zero
//! unless their reduced cost is nonzero, in which case a feasible problem is
//! unbounded.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Absolute tolerance on constraint violation of a returned solution.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Relative tolerance on reduced costs.
pub const OPTIMALITY_TOL: f64 = 1e-8;

const PIVOT_TOL: f64 = 1e-9;
const DEPENDENT_COLUMN_TOL: f64 = 1e-10;
const DEGENERATE_STREAK_LIMIT: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains non-finite values")]
    NonFinite,
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex did not converge within {0} iterations")]
    IterationLimit(usize),
}

/// `min f^T x` subject to `A x <= b`, `x` unrestricted.
#[derive(Debug, Clone)]
pub struct LpProblem {
    objective: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl LpProblem {
    pub fn new(objective: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, LpError> {
        if a.ncols() != objective.len() {
            return Err(LpError::Dimension(format!(
                "A has {} columns but f has {} entries",
                a.ncols(),
                objective.len()
            )));
        }
        if a.nrows() != b.len() {
            return Err(LpError::Dimension(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        let finite = |v: &f64| v.is_finite();
        if !(objective.iter().all(finite) && a.iter().all(finite) && b.iter().all(finite)) {
            return Err(LpError::NonFinite);
        }
        Ok(Self { objective, a, b })
    }

    pub fn objective(&self) -> &DVector<f64> {
        &self.objective
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    /// Largest `A x - b` over all rows (negative when strictly feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Row-echelon split of `A` into pivot and dependent parts.
struct Elimination {
    /// Original row indices; the first `r` are the pivot rows.
    row_order: Vec<usize>,
    pivot_cols: Vec<usize>,
    dependent_cols: Vec<usize>,
    /// Strictly lower part of the unit lower factor on the pivot rows, by
    /// column: `(row, value)` with `row < r`.
    l_t: Vec<Vec<(usize, f64)>>,
    /// Multipliers of the remaining rows, by row: `(pivot column, value)`.
    l_r: Vec<Vec<(usize, f64)>>,
    /// Upper triangular factor (r x r).
    u: DMatrix<f64>,
}

impl Elimination {
    fn rank(&self) -> usize {
        self.pivot_cols.len()
    }

    /// `v <- L_T^-1 v`.
    fn solve_l(&self, v: &mut DVector<f64>) {
        for (k, col) in self.l_t.iter().enumerate() {
            let vk = v[k];
            if vk != 0.0 {
                for &(i, l) in col {
                    v[i] -= l * vk;
                }
            }
        }
    }

    /// `v <- L_T^-T v`.
    fn solve_l_transpose(&self, v: &mut DVector<f64>) {
        for k in (0..self.rank()).rev() {
            let mut acc = v[k];
            for &(i, l) in &self.l_t[k] {
                acc -= l * v[i];
            }
            v[k] = acc;
        }
    }
}

fn eliminate(a: &DMatrix<f64>) -> Elimination {
    let (m, n) = a.shape();
    let mut work = a.clone();
    let mut row_order: Vec<usize> = (0..m).collect();
    let mut pivot_cols = Vec::new();
    let mut dependent_cols = Vec::new();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    // Sparsest columns first keeps fill-in low (the 1-norm programs have
    // identity blocks that then eliminate in linear time).
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_cached_key(|&j| a.column(j).iter().filter(|v| **v != 0.0).count());
    let mut k = 0;
    for (idx, &j) in order.iter().enumerate() {
        if k == m {
            dependent_cols.push(j);
            continue;
        }
        let (mut best, mut best_abs) = (k, 0.0);
        for i in k..m {
            let v = work[(i, j)].abs();
            if v > best_abs {
                best = i;
                best_abs = v;
            }
        }
        if best_abs <= DEPENDENT_COLUMN_TOL * scale {
            dependent_cols.push(j);
            continue;
        }
        if best != k {
            work.swap_rows(best, k);
            row_order.swap(best, k);
        }
        let pivot = work[(k, j)];
        let mut multipliers = Vec::new();
        for i in k + 1..m {
            if work[(i, j)] != 0.0 {
                work[(i, j)] /= pivot;
                multipliers.push((i, work[(i, j)]));
            }
        }
        if !multipliers.is_empty() {
            for &jj in &order[idx + 1..] {
                let top = work[(k, jj)];
                if top != 0.0 {
                    for &(i, mult) in &multipliers {
                        work[(i, jj)] -= mult * top;
                    }
                }
            }
        }
        pivot_cols.push(j);
        k += 1;
    }
    let r = k;
    let mut u = DMatrix::zeros(r, r);
    let mut l_t = vec![Vec::new(); r];
    let mut l_r = vec![Vec::new(); m - r];
    for (c, &j) in pivot_cols.iter().enumerate() {
        for i in 0..=c {
            u[(i, c)] = work[(i, j)];
        }
        for i in c + 1..m {
            let v = work[(i, j)];
            if v != 0.0 {
                if i < r {
                    l_t[c].push((i, v));
                } else {
                    l_r[i - r].push((c, v));
                }
            }
        }
    }
    Elimination {
        row_order,
        pivot_cols,
        dependent_cols,
        l_t,
        l_r,
        u,
    }
}

/// Dense simplex tableau in standard form: `rows` equality constraints over
/// non-negative columns; the last entry of each row is the right-hand side.
struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    /// Reduced costs; the last entry is the negated objective value.
    cost: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
    limit: usize,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(pr, pc);
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        let prow: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for i in 0..self.rows {
            if i == pr {
                continue;
            }
            let f = self.data[i * w + pc];
            if f != 0.0 {
                for (v, p) in self.data[i * w..(i + 1) * w].iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                self.data[i * w + pc] = 0.0;
                let rhs = &mut self.data[i * w + w - 1];
                if *rhs < 0.0 && *rhs > -1e-12 {
                    *rhs = 0.0;
                }
            }
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Load objective `c` (over the first `c.len()` columns) and price out
    /// the current basis.
    fn set_objective(&mut self, c: &[f64]) {
        self.cost = vec![0.0; self.width];
        self.cost[..c.len()].copy_from_slice(c);
        for i in 0..self.rows {
            let cb = c.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..self.width {
                    self.cost[j] -= cb * self.data[i * self.width + j];
                }
            }
        }
    }

    /// Run primal simplex over columns `0..allowed`.
    /// With `bounded` set the objective is known to be bounded below, so a
    /// column without an eligible pivot row is numerical noise and is skipped
    /// until the next pivot instead of reporting unboundedness.
    fn optimize(&mut self, allowed: usize, dual_tol: f64, bounded: bool) -> Result<(), LpError> {
        let mut degenerate_streak = 0;
        let mut skipped = vec![false; allowed];
        loop {
            let bland = degenerate_streak > DEGENERATE_STREAK_LIMIT;
            let mut enter = None;
            let mut best = -dual_tol;
            for (j, (&d, &skip)) in self.cost.iter().zip(&skipped).enumerate() {
                if d < -dual_tol && !skip {
                    if bland {
                        enter = Some(j);
                        break;
                    }
                    if d < best {
                        best = d;
                        enter = Some(j);
                    }
                }
            }
            let Some(pc) = enter else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, pc);
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio, a)),
                    Some((li, lr, la)) => {
                        let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[li]
                            } else {
                                a > la
                            }
                        } else {
                            ratio < lr
                        };
                        if better {
                            Some((i, ratio, a))
                        } else {
                            Some((li, lr, la))
                        }
                    }
                };
            }
            let Some((pr, ratio, _)) = leave else {
                if bounded {
                    skipped[pc] = true;
                    continue;
                }
                return Err(LpError::Unbounded);
            };
            skipped.fill(false);
            if ratio <= 1e-12 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            self.pivot(pr, pc);
            self.iterations += 1;
            if self.iterations > self.limit {
                return Err(LpError::IterationLimit(self.limit));
            }
        }
    }

    fn remove_row(&mut self, i: usize) {
        let w = self.width;
        self.data.drain(i * w..(i + 1) * w);
        self.basis.remove(i);
        self.rows -= 1;
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    let (m, n) = problem.a.shape();
    let f = &problem.objective;
    let b = &problem.b;
    let el = eliminate(&problem.a);
    let r = el.pivot_cols.len();
    let q = m - r;
    let t_rows = &el.row_order[..r];
    let r_rows = &el.row_order[r..];

    let b_t = DVector::from_iterator(r, t_rows.iter().map(|&i| b[i]));
    let b_r = DVector::from_iterator(q, r_rows.iter().map(|&i| b[i]));
    let f_p = DVector::from_iterator(r, el.pivot_cols.iter().map(|&j| f[j]));

    // G = L_R L_T^-1, one row per remaining constraint.
    let mut g_mat = DMatrix::zeros(q, r);
    for (i, row) in el.l_r.iter().enumerate() {
        let mut x = DVector::zeros(r);
        for &(c, v) in row {
            x[c] = v;
        }
        el.solve_l_transpose(&mut x);
        g_mat.row_mut(i).copy_from(&x.transpose());
    }
    let h = &b_r - &g_mat * &b_t;
    let g = {
        let mut z = el.u.tr_solve_upper_triangular(&f_p).expect("nonzero pivots");
        el.solve_l_transpose(&mut z);
        z
    };

    let f_scale = f.amax().max(1.0);
    let dual_tol = OPTIMALITY_TOL * f_scale;

    // Standard form over w = (w_T, w_R): [-G | I] w = h.
    let mut e = DMatrix::zeros(q, m);
    e.view_mut((0, 0), (q, r)).copy_from(&(-&g_mat));
    for i in 0..q {
        e[(i, r + i)] = 1.0;
    }
    let units: Vec<Option<usize>> = (0..q).map(|i| Some(r + i)).collect();
    let mut sf = StandardForm::new(&e, &h, &units);
    sf.phase_one()?;

    // Dependent columns: any reduced cost makes a feasible problem unbounded.
    for &j in &el.dependent_cols {
        let mut reduced = f[j];
        for (k, &row) in t_rows.iter().enumerate() {
            reduced -= g[k] * problem.a[(row, j)];
        }
        if reduced.abs() > dual_tol {
            return Err(LpError::Unbounded);
        }
    }

    let mut c2 = vec![0.0; m];
    for k in 0..r {
        c2[k] = -g[k];
    }
    sf.phase_two(&c2, dual_tol)?;
    let w = sf.values();
    let w_t = w.rows(0, r).into_owned();
    let x_p = {
        let mut y = &b_t - &w_t;
        el.solve_l(&mut y);
        el.u.solve_upper_triangular(&y).expect("nonzero pivots")
    };
    let mut x = DVector::zeros(n);
    for (k, &j) in el.pivot_cols.iter().enumerate() {
        x[j] = x_p[k];
    }
    let objective = f.dot(&x);
    Ok(LpSolution {
        x,
        objective,
        iterations: sf.iterations(),
    })
}

/// Two-phase simplex for `min c^T w  s.t.  E w = h, w >= 0`.
pub(crate) struct StandardForm {
    tab: Tableau,
    n_cols: usize,
    h_scale: f64,
}

impl StandardForm {
    /// `units[i]` may name a column of `E` equal to the `i`-th unit vector;
    /// it then starts in the basis when `h_i >= 0`. Other rows get an
    /// artificial variable.
    pub(crate) fn new(e: &DMatrix<f64>, h: &DVector<f64>, units: &[Option<usize>]) -> Self {
        let (q, n_cols) = e.shape();
        let needs_art: Vec<bool> = (0..q)
            .map(|i| h[i] < 0.0 || units.get(i).copied().flatten().is_none())
            .collect();
        let n_art = needs_art.iter().filter(|&&a| a).count();
        let cols = n_cols + n_art;
        let width = cols + 1;
        let mut data = vec![0.0; q * width];
        let mut basis = vec![0; q];
        let mut art = 0;
        for i in 0..q {
            let sign = if h[i] < 0.0 { -1.0 } else { 1.0 };
            let row = &mut data[i * width..(i + 1) * width];
            for (j, v) in e.row(i).iter().enumerate() {
                row[j] = sign * v;
            }
            row[cols] = sign * h[i];
            if needs_art[i] {
                row[n_cols + art] = 1.0;
                basis[i] = n_cols + art;
                art += 1;
            } else {
                basis[i] = units[i].unwrap();
            }
        }
        Self {
            tab: Tableau {
                rows: q,
                width,
                data,
                cost: Vec::new(),
                basis,
                iterations: 0,
                limit: 50 * (q + cols) + 1000,
            },
            n_cols,
            h_scale: h.amax().max(1.0),
        }
    }

    /// Find a feasible basis without artificial variables.
    pub(crate) fn phase_one(&mut self) -> Result<(), LpError> {
        let n = self.n_cols;
        let cols = self.tab.width - 1;
        if cols == n {
            return Ok(());
        }
        let tab = &mut self.tab;
        let mut c1 = vec![0.0; cols];
        for v in &mut c1[n..] {
            *v = 1.0;
        }
        tab.set_objective(&c1);
        tab.optimize(cols, 1e-12, true)?;
        let infeasibility = -tab.cost[cols];
        if infeasibility > FEASIBILITY_TOL * self.h_scale {
            return Err(LpError::Infeasible);
        }
        // Drive remaining (zero-level) artificials out of the basis.
        let mut i = 0;
        while i < tab.rows {
            if tab.basis[i] >= n {
                let pc = (0..n)
                    .filter(|&j| tab.at(i, j).abs() > PIVOT_TOL)
                    .max_by(|&a, &c| tab.at(i, a).abs().total_cmp(&tab.at(i, c).abs()));
                match pc {
                    Some(pc) => {
                        tab.pivot(i, pc);
                        i += 1;
                    }
                    None => tab.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn phase_two(&mut self, c: &[f64], dual_tol: f64) -> Result<(), LpError> {
        self.tab.set_objective(c);
        let bounded = c.iter().all(|&v| v >= 0.0);
        self.tab.optimize(self.n_cols, dual_tol, bounded)
    }

    pub(crate) fn values(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.n_cols);
        for i in 0..self.tab.rows {
            let j = self.tab.basis[i];
            if j < self.n_cols {
                w[j] = self.tab.rhs(i).max(0.0);
            }
        }
        w
    }

    pub(crate) fn iterations(&self) -> usize {
        self.tab.iterations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(f: &[f64], rows: usize, a: &[f64], b: &[f64]) -> LpProblem {
        LpProblem::new(
            DVector::from_row_slice(f),
            DMatrix::from_row_slice(rows, f.len(), a),
            DVector::from_row_slice(b),
        )
        .unwrap()
    }

    #[test]
    fn box_corner() {
        // min -x - y on the unit box.
        let p = lp(
            &[-1.0, -1.0],
            4,
            &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0],
            &[1.0, 1.0, 0.0, 0.0],
        );
        let s = solve_lp(&p).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!((s.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn needs_phase_one() {
        // min x + y s.t. x >= 1, y >= 2, x + y <= 10.
        let p = lp(&[1.0, 1.0], 3, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0], &[-1.0, -2.0, 10.0]);
        let s = solve_lp(&p).unwrap();
        assert!((s.objective - 3.0).abs() < 1e-12);
        assert!(p.max_violation(&s.x) <= FEASIBILITY_TOL);
    }

    #[test]
    fn infeasible_detected() {
        let p = lp(&[1.0], 2, &[1.0, -1.0], &[0.0, -1.0]);
        assert_eq!(solve_lp(&p).unwrap_err(), LpError::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let p = lp(&[-1.0], 1, &[-1.0], &[0.0]);
        assert_eq!(solve_lp(&p).unwrap_err(), LpError::Unbounded);
        // Direction outside the column space of A.
        let p = lp(&[0.0, 1.0], 1, &[1.0, 0.0], &[1.0]);
        assert_eq!(solve_lp(&p).unwrap_err(), LpError::Unbounded);
    }

    #[test]
    fn irrelevant_free_column_is_fine() {
        let p = lp(&[1.0, 0.0], 2, &[-1.0, 0.0, 1.0, 0.0], &[-2.0, 5.0]);
        let s = solve_lp(&p).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.x[1], 0.0);
    }

    #[test]
    fn no_constraints_zero_objective() {
        let p = LpProblem::new(DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap();
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn absolute_value_minimisation() {
        // min |x - 3| as min t s.t. x - t <= 3, -x - t <= -3.
        let p = lp(&[0.0, 1.0], 2, &[1.0, -1.0, -1.0, -1.0], &[3.0, -3.0]);
        let s = solve_lp(&p).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-12 && s.x[1].abs() < 1e-12);
    }

    #[test]
    fn degenerate_vertex() {
        // Several constraints meet at the optimum (0, 0).
        let p = lp(
            &[1.0, 1.0],
            4,
            &[-1.0, 0.0, 0.0, -1.0, -1.0, -1.0, -1.0, -2.0],
            &[0.0, 0.0, 0.0, 0.0],
        );
        let s = solve_lp(&p).unwrap();
        assert!(s.objective.abs() < 1e-12);
    }

    #[test]
    fn dimension_and_finiteness_checked() {
        assert!(matches!(
            LpProblem::new(DVector::zeros(2), DMatrix::zeros(1, 3), DVector::zeros(1)),
            Err(LpError::Dimension(_))
        ));
        assert!(matches!(
            LpProblem::new(
                DVector::from_element(1, f64::NAN),
                DMatrix::zeros(1, 1),
                DVector::zeros(1)
            ),
            Err(LpError::NonFinite)
        ));
    }
}
